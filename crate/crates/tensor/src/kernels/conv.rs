//! 2-D convolution kernels, forward and backward.
//!
//! Two interchangeable algorithms share one contract: a direct loop nest that
//! is easy to audit, and an im2col lowering onto GEMM. Both are checked against
//! the same naive oracle in the tests.

use crate::error::{Result, TensorError};
use crate::par;
use crate::real::Real;
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ConvAlgo {
    Direct,
    #[default]
    Im2col,
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        let [n, c_in, h, w] = input.0;
        let [c_out, wc, kh, kw] = weight.0;
        if wc != c_in {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {c_in} channels, kernel expects {wc}"),
            ));
        }
        if kh != kw || kh == 0 {
            return Err(TensorError::arg(
                "conv2d",
                format!("kernel must be square and non-empty, got {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(TensorError::arg("conv2d", "stride must be >= 1"));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel {k} with padding {pad} does not fit a {h}x{w} input"),
            ));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.c_out, self.oh, self.ow)
    }

    #[inline]
    fn ckk(&self) -> usize {
        self.c_in * self.k * self.k
    }

    #[inline]
    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    #[inline]
    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate touched by output coordinate `o` at kernel tap `t`.
    #[inline]
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

pub fn conv2d_forward<T: Real>(
    algo: ConvAlgo,
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
) -> Vec<T> {
    match algo {
        ConvAlgo::Direct => forward_direct(g, x, w, b),
        ConvAlgo::Im2col => forward_im2col(g, x, w, b),
    }
}

/// Gradients of a convolution; each is computed only when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    algo: ConvAlgo,
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let [need_dx, need_dw, need_db] = need;
    let dx = need_dx.then(|| match algo {
        ConvAlgo::Direct => backward_input_direct(g, w, dy),
        ConvAlgo::Im2col => backward_input_im2col(g, w, dy),
    });
    let dw = need_dw.then(|| match algo {
        ConvAlgo::Direct => backward_weight_direct(g, x, dy),
        ConvAlgo::Im2col => backward_weight_im2col(g, x, dy),
    });
    let db = need_db.then(|| backward_bias(g, dy));
    ConvGrads { dx, dw, db }
}

fn forward_direct<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.n * g.c_out * plane];
    par::for_each_chunk(&mut out, plane, |idx, o| {
        let (n, oc) = (idx / g.c_out, idx % g.c_out);
        o.fill(b.map_or(T::zero(), |b| b[oc]));
        for ic in 0..g.c_in {
            let xin = &x[(n * g.c_in + ic) * g.in_plane()..][..g.in_plane()];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = w[((oc * g.c_in + ic) * g.k + ky) * g.k + kx];
                    for oy in 0..g.oh {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                o[oy * g.ow + ox] += wv * xin[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn backward_input_direct<T: Real>(g: &ConvGeom, w: &[T], dy: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let mut dx = vec![T::zero(); g.n * g.c_in * g.in_plane()];
    par::for_each_chunk(&mut dx, g.in_plane(), |idx, d| {
        let (n, ic) = (idx / g.c_in, idx % g.c_in);
        for oc in 0..g.c_out {
            let gy = &dy[(n * g.c_out + oc) * plane..][..plane];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = w[((oc * g.c_in + ic) * g.k + ky) * g.k + kx];
                    for oy in 0..g.oh {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                d[iy * g.w + ix] += wv * gy[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

fn backward_weight_direct<T: Real>(g: &ConvGeom, x: &[T], dy: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let mut dw = vec![T::zero(); g.c_out * g.ckk()];
    par::for_each_chunk(&mut dw, g.ckk(), |oc, d| {
        for ic in 0..g.c_in {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let mut s = T::zero();
                    for n in 0..g.n {
                        let gy = &dy[(n * g.c_out + oc) * plane..][..plane];
                        let xin = &x[(n * g.c_in + ic) * g.in_plane()..][..g.in_plane()];
                        for oy in 0..g.oh {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for ox in 0..g.ow {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    s += gy[oy * g.ow + ox] * xin[iy * g.w + ix];
                                }
                            }
                        }
                    }
                    d[(ic * g.k + ky) * g.k + kx] = s;
                }
            }
        }
    });
    dw
}

fn backward_bias<T: Real>(g: &ConvGeom, dy: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    (0..g.c_out)
        .map(|oc| {
            let mut s = T::zero();
            for n in 0..g.n {
                for &v in &dy[(n * g.c_out + oc) * plane..][..plane] {
                    s += v;
                }
            }
            s
        })
        .collect()
}

/// Unfolds one sample `[c_in, h, w]` into columns `[c_in·k·k, oh·ow]`.
fn im2col<T: Real>(g: &ConvGeom, xn: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ic in 0..g.c_in {
        let xin = &xn[ic * g.in_plane()..][..g.in_plane()];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((ic * g.k + ky) * g.k + kx) * plane..][..plane];
                for oy in 0..g.oh {
                    let iy = g.src(oy, ky, g.h);
                    for ox in 0..g.ow {
                        row[oy * g.ow + ox] = match (iy, g.src(ox, kx, g.w)) {
                            (Some(iy), Some(ix)) => xin[iy * g.w + ix],
                            _ => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into one sample.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dxn: &mut [T]) {
    let plane = g.out_plane();
    for ic in 0..g.c_in {
        let d = &mut dxn[ic * g.in_plane()..][..g.in_plane()];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((ic * g.k + ky) * g.k + kx) * plane..][..plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            d[iy * g.w + ix] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn forward_im2col<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let plane = g.out_plane();
    let ckk = g.ckk();
    let item_in = g.c_in * g.in_plane();
    let mut out = vec![T::zero(); g.n * g.c_out * plane];
    par::for_each_chunk(&mut out, g.c_out * plane, |n, o| {
        let xn = &x[n * item_in..][..item_in];
        let mut buf;
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            buf = vec![T::zero(); ckk * plane];
            im2col(g, xn, &mut buf);
            &buf
        };
        T::gemm(
            g.c_out,
            ckk,
            plane,
            T::one(),
            w,
            (ckk as isize, 1),
            cols,
            (plane as isize, 1),
            T::zero(),
            o,
            (plane as isize, 1),
        );
        if let Some(b) = b {
            for (oc, row) in o.chunks_mut(plane).enumerate() {
                for v in row {
                    *v += b[oc];
                }
            }
        }
    });
    out
}

fn backward_input_im2col<T: Real>(g: &ConvGeom, w: &[T], dy: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let ckk = g.ckk();
    let item_in = g.c_in * g.in_plane();
    let mut dx = vec![T::zero(); g.n * item_in];
    par::for_each_chunk(&mut dx, item_in, |n, d| {
        let gy = &dy[n * g.c_out * plane..][..g.c_out * plane];
        if g.is_pointwise() {
            T::gemm(
                ckk,
                g.c_out,
                plane,
                T::one(),
                w,
                (1, ckk as isize),
                gy,
                (plane as isize, 1),
                T::zero(),
                d,
                (plane as isize, 1),
            );
            return;
        }
        let mut cols = vec![T::zero(); ckk * plane];
        T::gemm(
            ckk,
            g.c_out,
            plane,
            T::one(),
            w,
            (1, ckk as isize),
            gy,
            (plane as isize, 1),
            T::zero(),
            &mut cols,
            (plane as isize, 1),
        );
        col2im(g, &cols, d);
    });
    dx
}

fn backward_weight_im2col<T: Real>(g: &ConvGeom, x: &[T], dy: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let ckk = g.ckk();
    let item_in = g.c_in * g.in_plane();
    let partials = par::map_indexed(g.n, |n| {
        let xn = &x[n * item_in..][..item_in];
        let gy = &dy[n * g.c_out * plane..][..g.c_out * plane];
        let mut buf;
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            buf = vec![T::zero(); ckk * plane];
            im2col(g, xn, &mut buf);
            &buf
        };
        let mut p = vec![T::zero(); g.c_out * ckk];
        T::gemm(
            g.c_out,
            plane,
            ckk,
            T::one(),
            gy,
            (plane as isize, 1),
            cols,
            (1, plane as isize),
            T::zero(),
            &mut p,
            (ckk as isize, 1),
        );
        p
    });
    let mut dw = vec![T::zero(); g.c_out * ckk];
    for p in &partials {
        for (d, v) in dw.iter_mut().zip(p) {
            *d += *v;
        }
    }
    dw
}
