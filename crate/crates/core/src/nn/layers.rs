//! Parameterized building blocks. Layers hold [`ParamId`]s into a shared
//! [`ParamStore`]; a forward pass reads them through a [`Ctx`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgraphx_tensor::{he_normal, scaled_normal, BnConfig, Ctx, ParamId, ParamStore, Real, Shape, Tensor, Var};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    He,
    Normal(f64),
    Zero,
}

/// Allocates named parameters under a dotted scope path.
pub struct Builder<T: Real> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
    path: Vec<String>,
    dropout_sites: u64,
}

impl<T: Real> Builder<T> {
    pub fn new(seed: u64) -> Self {
        Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            path: Vec::new(),
            dropout_sites: 0,
        }
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }

    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.path.push(name.into());
        let out = f(self);
        self.path.pop();
        out
    }

    fn name(&self, leaf: &str) -> String {
        let mut parts = self.path.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    pub fn param(&mut self, leaf: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        Ok(self.store.add(self.name(leaf), value, trainable)?)
    }

    fn init(&mut self, shape: Shape, fan_in: usize, init: Init) -> Tensor<T> {
        match init {
            Init::He => he_normal(shape, fan_in, &mut self.rng),
            Init::Normal(std) => scaled_normal(shape, std, &mut self.rng),
            Init::Zero => Tensor::zeros(shape),
        }
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec, init: Init) -> Result<Conv2d> {
        self.scope(name, |b| {
            let shape = Shape::new(spec.c_out, spec.c_in, spec.k, spec.k);
            let w = b.init(shape, spec.c_in * spec.k * spec.k, init);
            let w = b.param("weight", w, true)?;
            let bias = match spec.bias {
                true => Some(b.param("bias", Tensor::zeros(Shape::vector(spec.c_out)), true)?),
                false => None,
            };
            Ok(Conv2d {
                w,
                b: bias,
                stride: spec.stride,
                pad: spec.pad,
            })
        })
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> Result<BatchNorm2d> {
        self.scope(name, |b| {
            Ok(BatchNorm2d {
                gamma: b.param("weight", Tensor::full(Shape::vector(c), T::one()), true)?,
                beta: b.param("bias", Tensor::zeros(Shape::vector(c)), true)?,
                mean: b.param("running_mean", Tensor::zeros(Shape::vector(c)), false)?,
                var: b.param("running_var", Tensor::full(Shape::vector(c), T::one()), false)?,
                cfg: BnConfig::default(),
            })
        })
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, init: Init) -> Result<Linear> {
        self.scope(name, |b| {
            let w = b.init(Shape::matrix(d_out, d_in), d_in, init);
            Ok(Linear {
                w: b.param("weight", w, true)?,
                b: b.param("bias", Tensor::zeros(Shape::vector(d_out)), true)?,
            })
        })
    }

    /// A dropout layer with a unique site id for mask seeding.
    pub fn dropout(&mut self, rate: f64) -> Dropout {
        self.dropout_sites += 1;
        Dropout {
            rate,
            site: self.dropout_sites,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// `k×k`, stride 1, "same" padding.
    pub fn same(c_in: usize, c_out: usize, k: usize, bias: bool) -> Self {
        ConvSpec {
            c_in,
            c_out,
            k,
            stride: 1,
            pad: k / 2,
            bias,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.w);
        let b = self.b.map(|b| ctx.param(b));
        Ok(ctx.tape.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub cfg: BnConfig,
}

impl BatchNorm2d {
    /// Normalizes per channel; in train mode the updated running statistics
    /// are staged on `ctx`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let params = ctx.params();
        let (rm, rv) = (params.get(self.mean).data(), params.get(self.var).data());
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        let mode = ctx.mode();
        let out = ctx.tape.batch_norm2d(x, g, b, (rm, rv), mode, self.cfg)?;
        if let Some((m, v)) = out.running {
            ctx.stage_update(self.mean, Tensor::vector(m));
            ctx.stage_update(self.var, Tensor::vector(v));
        }
        Ok(out.out)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w), ctx.param(self.b));
        Ok(ctx.tape.linear(x, w, Some(b))?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
    pub site: u64,
}

impl Dropout {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let seed = ctx.dropout_seed(self.site);
        let mode = ctx.mode();
        Ok(ctx.tape.dropout(x, self.rate, mode, seed)?)
    }
}
