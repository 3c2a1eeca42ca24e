use std::collections::BTreeMap;

use crate::error::Result;
use crate::kernels::conv::ConvAlgo;
use crate::ops::Mode;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Mixes several integers into one well-spread 64-bit seed (SplitMix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// One forward pass: a fresh tape, read-only access to the parameters, and
/// the bookkeeping a model needs (mode, dropout seeds, buffer updates).
///
/// Parameters are bound onto the tape lazily, once per pass. Running-stat
/// updates produced in train mode are staged and applied by the caller, so
/// the forward pass never mutates the store.
pub struct Ctx<'p, T: Real> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    track_grads: bool,
    seed: u64,
    step: u64,
    updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'p, T: Real> Ctx<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Ctx {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            mode,
            track_grads: mode == Mode::Train,
            seed: 0,
            step: 0,
            updates: Vec::new(),
        }
    }

    pub fn with_grads(mut self, track: bool) -> Self {
        self.track_grads = track;
        self
    }

    pub fn with_seed(mut self, seed: u64, step: u64) -> Self {
        self.seed = seed;
        self.step = step;
        self
    }

    pub fn with_conv_algo(mut self, algo: ConvAlgo) -> Self {
        self.tape = std::mem::take(&mut self.tape).with_conv_algo(algo);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Binds a parameter onto the tape (once) and returns its handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let entry = self.params.entry(id);
        let v = self
            .tape
            .leaf(entry.value.clone(), entry.trainable && self.track_grads);
        self.bound[id.index()] = Some(v);
        v
    }

    /// Current value of a non-trainable buffer.
    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.params.get(id)
    }

    /// Seed for a dropout mask, unique per `(run seed, layer, step)`.
    pub fn dropout_seed(&self, layer: u64) -> u64 {
        derive_seed(&[self.seed, layer, self.step])
    }

    pub fn stage_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    /// Runs backward from `loss` and returns gradients for every trainable
    /// parameter that took part in the pass.
    pub fn backward(&mut self, loss: Var) -> Result<BTreeMap<ParamId, Tensor<T>>> {
        let mut grads = self.tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.take(*v) {
                    out.insert(ParamId(i), g);
                }
            }
        }
        Ok(out)
    }

    /// Staged buffer updates, in the order they were produced.
    pub fn into_updates(self) -> Vec<(ParamId, Tensor<T>)> {
        self.updates
    }
}

impl<T: Real> ParamStore<T> {
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) -> Result<()> {
        for (id, value) in updates {
            self.set(id, value)?;
        }
        Ok(())
    }
}
