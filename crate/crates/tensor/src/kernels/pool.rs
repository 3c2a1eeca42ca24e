use crate::error::{Result, TensorError};
use crate::par;
use crate::real::Real;
use crate::tensor::Shape;

/// Output shape of a `k×k` max pool with the given stride (floor semantics).
pub fn max_pool_shape(input: Shape, k: usize, stride: usize) -> Result<Shape> {
    if k == 0 || stride == 0 {
        return Err(TensorError::arg("max_pool2d", "window and stride must be >= 1"));
    }
    if k > input.h() || k > input.w() {
        return Err(TensorError::shape(
            "max_pool2d",
            format!("window {k} larger than input {}x{}", input.h(), input.w()),
        ));
    }
    Ok(Shape::new(
        input.n(),
        input.c(),
        (input.h() - k) / stride + 1,
        (input.w() - k) / stride + 1,
    ))
}

/// Returns pooled values and, per output element, the flat input index of
/// the selected maximum (first occurrence on ties).
pub fn max_pool_forward<T: Real>(
    input: Shape,
    out: Shape,
    x: &[T],
    k: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>) {
    let (h, w) = (input.h(), input.w());
    let (oh, ow) = (out.h(), out.w());
    let mut arg = vec![0usize; out.numel()];
    par::for_each_chunk(&mut arg, oh * ow, |plane, a| {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                a[oy * ow + ox] = best;
            }
        }
    });
    let vals = arg.iter().map(|&i| x[i]).collect();
    (vals, arg)
}

pub fn max_pool_backward<T: Real>(input: Shape, arg: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input.numel()];
    for (&i, &g) in arg.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

/// Spatial mean per `(n, c)` plane.
///
/// Accumulates deviations from the first element, so a constant plane yields
/// its value exactly (a plain `sum / count` can be off by an ulp).
pub fn avg_pool_spatial<T: Real>(input: Shape, x: &[T]) -> Vec<T> {
    let plane = input.plane();
    let count = T::of(plane as f64);
    x.chunks(plane)
        .map(|p| p[0] + p.iter().map(|&v| v - p[0]).sum::<T>() / count)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_semantics_on_odd_dims() {
        let s = max_pool_shape(Shape::new(1, 1, 3, 3), 2, 2).unwrap();
        assert_eq!(s, Shape::new(1, 1, 1, 1));
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let (v, a) = max_pool_forward(Shape::new(1, 1, 3, 3), s, &x, 2, 2);
        assert_eq!(v, vec![4.0]);
        assert_eq!(a, vec![4]);
    }

    #[test]
    fn window_too_large() {
        assert!(max_pool_shape(Shape::new(1, 1, 1, 4), 2, 2).is_err());
    }

    #[test]
    fn constant_plane_mean_is_exact() {
        let x = vec![3.0f64; 2 * 5 * 7];
        assert_eq!(avg_pool_spatial(Shape::new(1, 2, 5, 7), &x), vec![3.0, 3.0]);
    }
}
