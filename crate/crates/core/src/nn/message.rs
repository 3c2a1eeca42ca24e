//! Convolutional message passing: a 1×1 convolution over
//! `concat(X_src, X_dst, E)` per edge, summed into each destination, refined
//! by a stack of 3×3 convolutions, and added back onto the node features.

use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Ctx, Real, Shape, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm2d, Builder, Conv2d, ConvSpec, Dropout, Init};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

/// Edge structure of a (batched) graph, as the message layers consume it.
#[derive(Clone, Debug)]
pub struct EdgeSet<'a, T> {
    pub num_nodes: usize,
    pub edges: &'a [(usize, usize)],
    /// `[E, F]`.
    pub features: Option<&'a Tensor<T>>,
}

/// Broadcasts each edge's feature vector to constant `h×w` channels:
/// `[E, F]` → `[E, F, h, w]`.
pub fn spatialize_edge_features<T: Real>(e: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, f, _, _] = e.shape().0;
    Tensor::from_fn(Shape::new(n, f, h, w), |[i, c, _, _]| e.at(i, c, 0, 0))
}

#[derive(Clone, Debug)]
pub struct ConvMessagePassing {
    pub conv: Conv2d,
    pub c_in: usize,
    pub edge_dim: usize,
}

impl ConvMessagePassing {
    pub fn build<T: Real>(b: &mut Builder<T>, c_in: usize, c_out: usize, edge_dim: usize) -> Result<Self> {
        let spec = ConvSpec::same(2 * c_in + edge_dim, c_out, 1, true);
        Ok(ConvMessagePassing {
            conv: b.conv("message", spec, Init::He)?,
            c_in,
            edge_dim,
        })
    }

    /// Messages `[E, C_out, H, W]` in edge order, or `None` without edges.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, g: &EdgeSet<'_, T>) -> Result<Option<Var>> {
        let s = ctx.tape.shape(x);
        if s.c() != self.c_in {
            return Err(Error::graph(format!("message layer expects {} channels, got {s}", self.c_in)));
        }
        let f = g.features.map_or(0, |e| e.shape().c());
        if f != self.edge_dim {
            return Err(Error::graph(format!(
                "message layer expects {} edge channels, got {f}",
                self.edge_dim
            )));
        }
        if g.edges.is_empty() {
            return Ok(None);
        }
        let src: Vec<usize> = g.edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = g.edges.iter().map(|e| e.1).collect();
        let xi = ctx.tape.index_select(x, &src)?;
        let xj = ctx.tape.index_select(x, &dst)?;
        let mut parts = vec![xi, xj];
        if let Some(e) = g.features.filter(|_| f > 0) {
            parts.push(ctx.tape.constant(spatialize_edge_features(e, s.h(), s.w())));
        }
        let cat = ctx.tape.concat_channels(&parts)?;
        Ok(Some(self.conv.forward(ctx, cat)?))
    }
}

/// `m_j = Σ_{(i,j)} M_ij` (or the mean over in-edges). Nodes without
/// in-edges receive zeros.
pub fn aggregate<T: Real>(
    ctx: &mut Ctx<'_, T>,
    messages: Option<Var>,
    g: &EdgeSet<'_, T>,
    node_shape: Shape,
    mode: Aggregation,
) -> Result<Var> {
    let Some(m) = messages else {
        return Ok(ctx.tape.constant(Tensor::zeros(node_shape)));
    };
    let dst: Vec<usize> = g.edges.iter().map(|e| e.1).collect();
    let sum = ctx.tape.index_add(m, &dst, g.num_nodes)?;
    match mode {
        Aggregation::Sum => Ok(sum),
        Aggregation::Mean => {
            let mut deg = vec![0usize; g.num_nodes];
            for &d in &dst {
                deg[d] += 1;
            }
            let inv: Vec<T> = deg
                .iter()
                .map(|&d| if d == 0 { T::zero() } else { T::one() / T::of(d as f64) })
                .collect();
            Ok(ctx.tape.row_scale(sum, &inv)?)
        }
    }
}

/// `K` stages of conv3×3 → BN → dropout → ReLU, channel count preserved.
#[derive(Clone, Debug)]
pub struct DeepCnnAggregator {
    pub stages: Vec<(Conv2d, BatchNorm2d, Dropout)>,
}

impl DeepCnnAggregator {
    pub fn build<T: Real>(b: &mut Builder<T>, c: usize, depth: usize, dropout: f64, zero_init_last: bool) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("aggregator_depth must be at least 1"));
        }
        b.scope("aggregator", |b| {
            let mut stages = Vec::with_capacity(depth);
            for k in 0..depth {
                let init = if zero_init_last && k + 1 == depth { Init::Zero } else { Init::He };
                let conv = b.conv(&format!("conv{k}"), ConvSpec::same(c, c, 3, false), init)?;
                let bn = b.batch_norm(&format!("bn{k}"), c)?;
                stages.push((conv, bn, b.dropout(dropout)));
            }
            Ok(DeepCnnAggregator { stages })
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, m: Var) -> Result<Var> {
        let mut y = m;
        for (conv, bn, drop) in &self.stages {
            y = conv.forward(ctx, y)?;
            y = bn.forward(ctx, y)?;
            y = drop.forward(ctx, y)?;
            y = ctx.tape.relu(y)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub layers: usize,
    /// Output channels of every layer (`C_out`).
    pub channels: usize,
    pub aggregator_depth: usize,
    pub dropout_rate: f64,
    pub zero_init_last: bool,
    pub aggregation: Aggregation,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 2,
            channels: 16,
            aggregator_depth: 1,
            dropout_rate: 0.0,
            zero_init_last: true,
            aggregation: Aggregation::Sum,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.aggregator_depth == 0 {
            return Err(Error::config("gnn.channels and gnn.aggregator_depth must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("gnn.dropout_rate must be in [0, 1)"));
        }
        Ok(())
    }
}

/// `X'_j = P(X_j) + A(m_j)`, where `P` is the identity or, when channel
/// counts differ, a 1×1 projection.
#[derive(Clone, Debug)]
pub struct GnnLayer {
    pub message: ConvMessagePassing,
    pub aggregator: DeepCnnAggregator,
    pub proj: Option<Conv2d>,
    pub aggregation: Aggregation,
}

impl GnnLayer {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, c_in: usize, edge_dim: usize, cfg: &GnnConfig) -> Result<Self> {
        b.scope(name, |b| {
            let c_out = cfg.channels;
            Ok(GnnLayer {
                message: ConvMessagePassing::build(b, c_in, c_out, edge_dim)?,
                aggregator: DeepCnnAggregator::build(b, c_out, cfg.aggregator_depth, cfg.dropout_rate, cfg.zero_init_last)?,
                proj: match c_in != c_out {
                    true => Some(b.conv("proj", ConvSpec::same(c_in, c_out, 1, false), Init::He)?),
                    false => None,
                },
                aggregation: cfg.aggregation,
            })
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, g: &EdgeSet<'_, T>) -> Result<Var> {
        let s = ctx.tape.shape(x);
        let c_out = self.message.conv_out(ctx);
        let msgs = self.message.forward(ctx, x, g)?;
        let m = aggregate(ctx, msgs, g, s.with_c(c_out), self.aggregation)?;
        let a = self.aggregator.forward(ctx, m)?;
        let base = match &self.proj {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        Ok(ctx.tape.add(base, a)?)
    }
}

impl ConvMessagePassing {
    fn conv_out<T: Real>(&self, ctx: &Ctx<'_, T>) -> usize {
        ctx.params().get(self.conv.w).shape().n()
    }
}
