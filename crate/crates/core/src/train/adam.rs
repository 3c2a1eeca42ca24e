//! Adam with bias correction and optional L2 weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Checkpoint, ParamId, ParamStore, Real, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5.12e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config("invalid optimizer settings (need lr > 0, betas in [0, 1), eps > 0, weight_decay >= 0)"))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    /// Steps taken so far.
    pub t: u64,
    m: BTreeMap<ParamId, Tensor<T>>,
    v: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    /// Zero moments for every trainable parameter of `params`.
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = |id| (id, Tensor::zeros(params.get(id).shape()));
        Adam {
            cfg,
            t: 0,
            m: params.trainable_ids().map(zeros).collect(),
            v: params.trainable_ids().map(zeros).collect(),
        }
    }

    pub fn moments(&self, id: ParamId) -> Option<(&Tensor<T>, &Tensor<T>)> {
        Some((self.m.get(&id)?, self.v.get(&id)?))
    }

    /// One update. Parameters without a gradient keep their value and
    /// moments; a non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<ParamId, Tensor<T>>) -> Result<()> {
        for (&id, g) in grads {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for `{}`", params.name(id))));
            }
            if !self.m.contains_key(&id) {
                return Err(Error::data(format!("gradient for untracked parameter `{}`", params.name(id))));
            }
        }
        self.t += 1;
        let c = self.cfg;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2, eps, wd) = (T::of(c.beta1), T::of(c.beta2), T::of(c.eps), T::of(c.weight_decay));
        let (one, step, bc2_sqrt) = (T::one(), T::of(c.lr / bc1), T::of(bc2.sqrt()));
        for (&id, g) in grads {
            let m = self.m.get_mut(&id).expect("checked above").data_mut();
            let v = self.v.get_mut(&id).expect("checked above").data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i] + wd * p[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }

    pub fn save(&self, ck: &mut Checkpoint, params: &ParamStore<T>) {
        for (id, m) in &self.m {
            ck.push(format!("adam.m.{}", params.name(*id)), m);
        }
        for (id, v) in &self.v {
            ck.push(format!("adam.v.{}", params.name(*id)), v);
        }
    }

    pub fn load(&mut self, ck: &Checkpoint, params: &ParamStore<T>, t: u64) -> Result<()> {
        for (prefix, map) in [("adam.m.", &mut self.m), ("adam.v.", &mut self.v)] {
            for (id, slot) in map.iter_mut() {
                let key = format!("{prefix}{}", params.name(*id));
                let saved = ck.get(&key).ok_or_else(|| Error::data(format!("checkpoint lacks `{key}`")))?;
                if saved.shape() != slot.shape() {
                    return Err(Error::data(format!("`{key}` has shape {}, expected {}", saved.shape(), slot.shape())));
                }
                *slot = saved.cast();
            }
        }
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tgraphx_tensor::Shape;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut p = ParamStore::<f64>::new();
        let id = p.add("w", Tensor::vector(vec![1.0, -2.0]), true).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
        let g = BTreeMap::from([(id, Tensor::vector(vec![3.0, -0.5]))]);
        opt.step(&mut p, &g).unwrap();
        let w = p.get(id).data();
        assert!((w[0] - (1.0 - 0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-12);
        assert!((w[1] - (-2.0 + 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut p = ParamStore::<f64>::new();
        let id = p.add("layer.w", Tensor::zeros(Shape::vector(2)), true).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let g = BTreeMap::from([(id, Tensor::vector(vec![f64::NAN, 0.0]))]);
        let err = opt.step(&mut p, &g).unwrap_err();
        assert!(err.to_string().contains("layer.w"));
        assert_eq!(opt.t, 0);
        assert_eq!(p.get(id).data(), &[0.0, 0.0]);
    }
}
