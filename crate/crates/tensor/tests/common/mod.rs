#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tgraphx_tensor::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Independent direct-summation convolution, written from the definition.
pub fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let [n, ci, h, wd] = x.shape().0;
    let [co, _, k, _] = w.shape().0;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    Tensor::from_fn(Shape::new(n, co, oh, ow), |[s, o, y, xx]| {
        let mut acc = b.map_or(0.0, |b| b[o]);
        for c in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (y * stride + ky) as isize - pad as isize;
                    let ix = (xx * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += x.at(s, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                    }
                }
            }
        }
        acc
    })
}
