//! Node pooling, graph readout, and the classification / IoU heads.

use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Ctx, Real, Shape, Tape, Var};

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::nn::layers::{Builder, Init, Linear};

/// Spatial mean per node and channel: `[N, C, H, W]` → `[N, C]`.
pub fn pool_nodes<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    Ok(tape.avg_pool_spatial(x)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphPool {
    #[default]
    Mean,
    Sum,
}

/// Per-graph reduction of node rows `z: [ΣN, C]` → `[G, C]`.
pub fn pool_graph<T: Real>(tape: &mut Tape<T>, z: Var, batch: &GraphBatch<T>, mode: GraphPool) -> Result<Var> {
    let g = batch.num_graphs();
    let sum = tape.index_add(z, &batch.graph_ids, g)?;
    match mode {
        GraphPool::Sum => Ok(sum),
        GraphPool::Mean => {
            let inv: Vec<T> = (0..g).map(|i| T::one() / T::of(batch.nodes_of(i).len() as f64)).collect();
            Ok(tape.row_scale(sum, &inv)?)
        }
    }
}

/// How node outputs become one prediction per graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Node-level predictions only.
    None,
    /// The logit for class `k` is node `k`'s own logit for `k`, where a
    /// node's class is its `node_labels` entry. Classes without a node get
    /// a large negative constant.
    #[default]
    NodeSelect,
    /// Logits of each graph's last node.
    LastNode,
    /// Classifier applied to the pooled node embeddings.
    Mean,
    Sum,
}

/// Logit assigned to classes that have no node in a graph.
pub const ABSENT_LOGIT: f64 = -1e4;

/// Gathers `[G, C]` graph logits from `[ΣN, C]` node logits by node class.
pub fn node_select<T: Real>(tape: &mut Tape<T>, logits: Var, batch: &GraphBatch<T>) -> Result<Var> {
    let labels = batch
        .node_labels
        .as_ref()
        .ok_or_else(|| Error::data("node-select readout needs node labels"))?;
    let c = tape.shape(logits).c();
    let g = batch.num_graphs();
    let mut index = vec![None; g * c];
    for gi in 0..g {
        for node in batch.nodes_of(gi) {
            let k = labels[node];
            if k >= c {
                return Err(Error::data(format!("node label {k} out of range for {c} classes")));
            }
            index[gi * c + k].get_or_insert(node * c + k);
        }
    }
    Ok(tape.gather(logits, &index, Shape::matrix(g, c), T::of(ABSENT_LOGIT))?)
}

/// `ŷ = W z + b`.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub linear: Linear,
    pub classes: usize,
}

/// Standard deviation of the classifier weights at initialization; small so
/// that initial logits are near zero.
pub const HEAD_INIT_STD: f64 = 0.01;

impl ClassifierHead {
    pub fn build<T: Real>(b: &mut Builder<T>, d: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("at least 2 classes are required"));
        }
        Ok(ClassifierHead {
            linear: b.linear("classifier", d, classes, Init::Normal(HEAD_INIT_STD))?,
            classes,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        self.linear.forward(ctx, z)
    }
}

/// `sigmoid(w·z + b)`, one IoU estimate per node.
#[derive(Clone, Debug)]
pub struct IouHead {
    pub linear: Linear,
}

impl IouHead {
    pub fn build<T: Real>(b: &mut Builder<T>, d: usize) -> Result<Self> {
        Ok(IouHead {
            linear: b.linear("iou_head", d, 1, Init::Normal(HEAD_INIT_STD))?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let y = self.linear.forward(ctx, z)?;
        Ok(ctx.tape.sigmoid(y)?)
    }
}
