//! Optional pre-encoder and the residual CNN encoder applied to every node.

use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Ctx, Real, Tape, Var};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm2d, Builder, Conv2d, ConvSpec, Dropout, Init};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub use_preencoder: bool,
    pub pre_channels: usize,
    /// Number of residual blocks; must equal `channels.len()`.
    pub blocks: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub dropout_rate: f64,
    /// Pool only while `min(h, w)` exceeds this.
    pub pool_min_spatial: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            use_preencoder: false,
            pre_channels: 8,
            blocks: 2,
            channels: vec![8, 16],
            kernel: 3,
            padding: 1,
            dropout_rate: 0.0,
            pool_min_spatial: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.channels.len() != self.blocks {
            return Err(Error::config(format!(
                "encoder.blocks = {} but {} channel entries",
                self.blocks,
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) || (self.use_preencoder && self.pre_channels == 0) {
            return Err(Error::config("encoder channel counts must be positive"));
        }
        if self.kernel != 3 || self.padding != 1 {
            return Err(Error::config("encoder blocks use 3x3 kernels with padding 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("encoder.dropout_rate must be in [0, 1)"));
        }
        if self.pool_min_spatial == 0 {
            return Err(Error::config("encoder.pool_min_spatial must be at least 1"));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    /// Output spatial size for an `h×w` input.
    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.pool_stages(h, w);
        (h >> k, w >> k)
    }

    /// How many blocks end in a 2×2 max pool for an `h×w` input.
    pub fn pool_stages(&self, mut h: usize, mut w: usize) -> usize {
        let mut stages = 0;
        for _ in 0..self.blocks {
            if h.min(w) > self.pool_min_spatial {
                h /= 2;
                w /= 2;
                stages += 1;
            }
        }
        stages
    }
}

/// `r + (L − 1)(r − 1)` for `L` stacked `r×r` convolutions.
pub fn effective_receptive_field(r: usize, layers: usize) -> usize {
    r + layers.saturating_sub(1) * r.saturating_sub(1)
}

/// 2×2 stride-2 max pool when `min(h, w) > min_spatial`, otherwise identity.
pub fn safe_max_pool<T: Real>(tape: &mut Tape<T>, x: Var, min_spatial: usize) -> Result<Var> {
    let s = tape.shape(x);
    if s.h().min(s.w()) > min_spatial {
        Ok(tape.max_pool2d(x, 2, 2)?)
    } else {
        Ok(x)
    }
}

/// conv3×3 → BN → ReLU.
#[derive(Clone, Debug)]
pub struct PreEncoder {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl PreEncoder {
    pub fn build<T: Real>(b: &mut Builder<T>, c_in: usize, c_out: usize) -> Result<Self> {
        b.scope("pre", |b| {
            Ok(PreEncoder {
                conv: b.conv("conv", ConvSpec::same(c_in, c_out, 3, false), Init::He)?,
                bn: b.batch_norm("bn", c_out)?,
            })
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.tape.relu(y)?)
    }
}

/// conv-BN-ReLU-conv-BN, plus the (projected) input, then ReLU.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    /// 1×1 projection of the skip path, present iff channel counts differ.
    pub proj: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(ResidualBlock {
                conv1: b.conv("conv1", ConvSpec::same(c_in, c_out, 3, false), Init::He)?,
                bn1: b.batch_norm("bn1", c_out)?,
                conv2: b.conv("conv2", ConvSpec::same(c_out, c_out, 3, false), Init::He)?,
                bn2: b.batch_norm("bn2", c_out)?,
                proj: match c_in != c_out {
                    true => Some(b.conv("proj", ConvSpec::same(c_in, c_out, 1, true), Init::He)?),
                    false => None,
                },
            })
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y)?;
        let y = self.conv2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        let skip = match &self.proj {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(y)?)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub pre: Option<PreEncoder>,
    pub blocks: Vec<ResidualBlock>,
    pub dropouts: Vec<Dropout>,
    pub pool_min_spatial: usize,
}

impl Encoder {
    pub fn build<T: Real>(b: &mut Builder<T>, cfg: &EncoderConfig, in_channels: usize) -> Result<Self> {
        cfg.validate()?;
        b.scope("encoder", |b| {
            let pre = match cfg.use_preencoder {
                true => Some(PreEncoder::build(b, in_channels, cfg.pre_channels)?),
                false => None,
            };
            let mut c = if cfg.use_preencoder { cfg.pre_channels } else { in_channels };
            let mut blocks = Vec::new();
            let mut dropouts = Vec::new();
            for (i, &out) in cfg.channels.iter().enumerate() {
                blocks.push(ResidualBlock::build(b, &format!("block{i}"), c, out)?);
                dropouts.push(b.dropout(cfg.dropout_rate));
                c = out;
            }
            Ok(Encoder {
                pre,
                blocks,
                dropouts,
                pool_min_spatial: cfg.pool_min_spatial,
            })
        })
    }

    /// Identity when the pre-encoder is disabled.
    pub fn pre_encode<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match &self.pre {
            Some(p) => p.forward(ctx, x),
            None => Ok(x),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.pre_encode(ctx, x)?;
        for (block, drop) in self.blocks.iter().zip(&self.dropouts) {
            y = block.forward(ctx, y)?;
            y = safe_max_pool(&mut ctx.tape, y, self.pool_min_spatial)?;
            y = drop.forward(ctx, y)?;
        }
        let s = ctx.tape.shape(y);
        if s.h() == 0 || s.w() == 0 {
            return Err(Error::data(format!("encoder collapsed spatial dims to {s}")));
        }
        Ok(y)
    }
}
