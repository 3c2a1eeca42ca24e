//! Per-channel batch normalization over `(n, h, w)`.

use crate::real::Real;
use crate::tensor::Shape;

/// Values saved by the forward pass for the backward pass.
pub struct BnSaved<T> {
    /// Normalized input `(x - mean) * inv_std`, same layout as `x`.
    pub xhat: Vec<T>,
    /// `1 / sqrt(var + eps)` per channel.
    pub inv_std: Vec<T>,
}

fn channel_elems<T: Real>(shape: Shape, x: &[T], c: usize) -> impl Iterator<Item = T> + '_ {
    let plane = shape.plane();
    (0..shape.n()).flat_map(move |n| x[(n * shape.c() + c) * plane..][..plane].iter().copied())
}

/// Mean and biased variance per channel.
pub fn channel_stats<T: Real>(shape: Shape, x: &[T]) -> (Vec<T>, Vec<T>) {
    let count = T::of((shape.n() * shape.plane()) as f64);
    let mut mean = Vec::with_capacity(shape.c());
    let mut var = Vec::with_capacity(shape.c());
    for c in 0..shape.c() {
        let m = channel_elems(shape, x, c).sum::<T>() / count;
        let v = channel_elems(shape, x, c).map(|v| (v - m) * (v - m)).sum::<T>() / count;
        mean.push(m);
        var.push(v);
    }
    (mean, var)
}

pub fn bn_forward<T: Real>(
    shape: Shape,
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = shape.plane();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for n in 0..shape.n() {
        for c in 0..shape.c() {
            let base = (n * shape.c() + c) * plane;
            for i in base..base + plane {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Gradients `(dx, dgamma, dbeta)`.
///
/// In train mode the batch statistics depend on `x`, which contributes the
/// two mean-correction terms; in eval mode the statistics are constants.
pub fn bn_backward<T: Real>(
    shape: Shape,
    dy: &[T],
    gamma: &[T],
    saved: &BnSaved<T>,
    train: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = shape.plane();
    let count = T::of((shape.n() * plane) as f64);
    let mut dgamma = vec![T::zero(); shape.c()];
    let mut dbeta = vec![T::zero(); shape.c()];
    for n in 0..shape.n() {
        for c in 0..shape.c() {
            let base = (n * shape.c() + c) * plane;
            let rows = &dy[base..base + plane];
            for (g, x) in rows.iter().zip(&saved.xhat[base..base + plane]) {
                dgamma[c] += *g * *x;
                dbeta[c] += *g;
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for n in 0..shape.n() {
        for c in 0..shape.c() {
            let base = (n * shape.c() + c) * plane;
            let scale = gamma[c] * saved.inv_std[c];
            for i in base..base + plane {
                dx[i] = if train {
                    scale * (dy[i] - dbeta[c] / count - saved.xhat[i] * dgamma[c] / count)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
