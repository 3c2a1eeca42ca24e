//! The full network: (pre-)encoder per node, stacked message-passing layers,
//! spatial pooling, classifier, and graph readout.

use serde::{Deserialize, Serialize};
use tgraphx_tensor::{ConvAlgo, Ctx, Mode, ParamStore, Precision, Real, Var};

use crate::error::{Context, Error, Result};
use crate::graph::GraphBatch;
use crate::nn::encoder::{Encoder, EncoderConfig};
use crate::nn::heads::{node_select, pool_graph, pool_nodes, ClassifierHead, GraphPool, IouHead, Readout};
use crate::nn::layers::Builder;
use crate::nn::loss::{self, LossConfig, PredictionBundle};
use crate::nn::message::{EdgeSet, GnnConfig, GnnLayer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// One label per graph (`graph_label`).
    #[default]
    Graph,
    /// One label per node (`node_labels`).
    Node,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvPath {
    Direct,
    #[default]
    Im2col,
}

impl From<ConvPath> for ConvAlgo {
    fn from(p: ConvPath) -> Self {
        match p {
            ConvPath::Direct => ConvAlgo::Direct,
            ConvPath::Im2col => ConvAlgo::Im2col,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seed: u64,
    pub precision: PrecisionName,
    pub in_channels: usize,
    pub classes: usize,
    pub edge_dim: usize,
    pub target: Target,
    pub readout: Readout,
    pub enable_iou_head: bool,
    pub conv: ConvPath,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    pub loss: LossConfig,
}

/// Serde-friendly mirror of [`Precision`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionName {
    #[default]
    Single,
    Double,
}

impl From<PrecisionName> for Precision {
    fn from(p: PrecisionName) -> Self {
        match p {
            PrecisionName::Single => Precision::Single,
            PrecisionName::Double => Precision::Double,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seed: 0,
            precision: PrecisionName::Single,
            in_channels: 3,
            classes: 3,
            edge_dim: 1,
            target: Target::Graph,
            readout: Readout::NodeSelect,
            enable_iou_head: false,
            conv: ConvPath::Im2col,
            encoder: EncoderConfig::default(),
            gnn: GnnConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gnn.validate()?;
        self.loss.validate()?;
        if self.in_channels == 0 {
            return Err(Error::config("in_channels must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config("classes must be at least 2"));
        }
        if self.target == Target::Graph && self.readout == Readout::None {
            return Err(Error::config("graph targets need a readout other than none"));
        }
        if self.loss.needs_iou() && !self.enable_iou_head {
            return Err(Error::config("iou-composite loss with beta > 0 needs enable_iou_head"));
        }
        Ok(())
    }

    /// Channels of the node embeddings fed to the heads.
    pub fn embed_dim(&self) -> usize {
        if self.gnn.layers > 0 {
            self.gnn.channels
        } else {
            self.encoder.out_channels()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub layers: Vec<GnnLayer>,
    pub classifier: ClassifierHead,
    pub iou_head: Option<IouHead>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[ΣN, C_gnn, H2, W2]` after the last message-passing layer.
    pub node_maps: Var,
    /// `[ΣN, C_gnn]`.
    pub embeddings: Var,
    pub node_logits: Var,
    pub graph_logits: Option<Var>,
    /// `[ΣN, 1]`.
    pub iou: Option<Var>,
}

impl ForwardOutput {
    /// Logits aligned with the configured targets.
    pub fn logits(&self, target: Target) -> Var {
        match (target, self.graph_logits) {
            (Target::Graph, Some(g)) => g,
            _ => self.node_logits,
        }
    }
}

impl Model {
    /// Builds the model and its freshly initialized parameters.
    pub fn new<T: Real>(cfg: ModelConfig) -> Result<(Model, ParamStore<T>)> {
        cfg.validate()?;
        let mut b = Builder::<T>::new(cfg.seed);
        let encoder = Encoder::build(&mut b, &cfg.encoder, cfg.in_channels)?;
        let mut c = cfg.encoder.out_channels();
        let mut layers = Vec::with_capacity(cfg.gnn.layers);
        b.scope("gnn", |b| {
            for i in 0..cfg.gnn.layers {
                layers.push(GnnLayer::build(b, &format!("layer{i}"), c, cfg.edge_dim, &cfg.gnn)?);
                c = cfg.gnn.channels;
            }
            Ok(())
        })?;
        let classifier = ClassifierHead::build(&mut b, c, cfg.classes)?;
        let iou_head = match cfg.enable_iou_head {
            true => Some(IouHead::build(&mut b, c)?),
            false => None,
        };
        let model = Model {
            cfg,
            encoder,
            layers,
            classifier,
            iou_head,
        };
        Ok((model, b.finish()))
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, batch: &GraphBatch<T>) -> Result<ForwardOutput> {
        let s = batch.node_features.shape();
        if s.c() != self.cfg.in_channels {
            return Err(Error::data(format!(
                "nodes have {} channels, model expects {}",
                s.c(),
                self.cfg.in_channels
            )));
        }
        let x = ctx.tape.constant(batch.node_features.clone());
        let mut h = self.encoder.forward(ctx, x).stage("encoder")?;
        let edges = EdgeSet {
            num_nodes: batch.num_nodes(),
            edges: &batch.edges,
            features: batch.edge_features.as_ref(),
        };
        for layer in &self.layers {
            h = layer.forward(ctx, h, &edges).stage("message passing")?;
        }
        let z = pool_nodes(&mut ctx.tape, h)?;
        let node_logits = self.classifier.forward(ctx, z).stage("classifier")?;
        let graph_logits = match self.cfg.readout {
            Readout::None => None,
            Readout::NodeSelect => Some(node_select(&mut ctx.tape, node_logits, batch).stage("readout")?),
            Readout::LastNode => {
                let last: Vec<usize> = (0..batch.num_graphs()).map(|g| batch.nodes_of(g).end - 1).collect();
                Some(ctx.tape.index_select(node_logits, &last)?)
            }
            Readout::Mean | Readout::Sum => {
                let mode = if self.cfg.readout == Readout::Mean { GraphPool::Mean } else { GraphPool::Sum };
                let pooled = pool_graph(&mut ctx.tape, z, batch, mode)?;
                Some(self.classifier.forward(ctx, pooled)?)
            }
        };
        let iou = match &self.iou_head {
            Some(head) => Some(head.forward(ctx, z)?),
            None => None,
        };
        Ok(ForwardOutput {
            node_maps: h,
            embeddings: z,
            node_logits,
            graph_logits,
            iou,
        })
    }

    pub fn targets<T: Real>(&self, batch: &GraphBatch<T>) -> Result<Vec<usize>> {
        let t: Vec<usize> = match self.cfg.target {
            Target::Graph => batch
                .graph_labels
                .iter()
                .map(|l| l.ok_or_else(|| Error::data("graph without a label")))
                .collect::<Result<_>>()?,
            Target::Node => batch
                .node_labels
                .clone()
                .ok_or_else(|| Error::data("graphs without node labels"))?,
        };
        if let Some(bad) = t.iter().find(|&&k| k >= self.cfg.classes) {
            return Err(Error::data(format!("label {bad} out of range for {} classes", self.cfg.classes)));
        }
        // A node-select target must name one of the graph's own nodes.
        if self.cfg.target == Target::Graph && self.cfg.readout == Readout::NodeSelect {
            let labels = batch
                .node_labels
                .as_ref()
                .ok_or_else(|| Error::data("node-select readout needs node labels"))?;
            for (g, &k) in t.iter().enumerate() {
                if !batch.nodes_of(g).any(|n| labels[n] == k) {
                    return Err(Error::data(format!("graph {g}: target class {k} has no node")));
                }
            }
        }
        Ok(t)
    }

    /// Forward pass plus the configured loss.
    pub fn loss<T: Real>(&self, ctx: &mut Ctx<'_, T>, batch: &GraphBatch<T>) -> Result<(Var, ForwardOutput, Vec<usize>)> {
        let out = self.forward(ctx, batch)?;
        let targets = self.targets(batch)?;
        let logits = out.logits(self.cfg.target);
        let gt: Option<Vec<T>> = batch.node_values.as_ref().map(|v| v.iter().map(|&x| T::of(x)).collect());
        let iou = match (out.iou, gt.as_deref()) {
            (Some(p), Some(g)) => Some((p, g)),
            _ => None,
        };
        let l = loss::loss(&mut ctx.tape, logits, &targets, iou, &self.cfg.loss).stage("loss")?;
        Ok((l, out, targets))
    }

    /// Eval-mode predictions for one batch.
    pub fn predict<T: Real>(&self, params: &ParamStore<T>, batch: &GraphBatch<T>) -> Result<(PredictionBundle, f64)> {
        let mut ctx = Ctx::new(params, Mode::Eval).with_conv_algo(self.cfg.conv.into());
        let (l, out, targets) = self.loss(&mut ctx, batch)?;
        let logits = ctx.tape.value(out.logits(self.cfg.target));
        let bundle = PredictionBundle {
            logits: logits.to_f64_vec(),
            classes: self.cfg.classes,
            targets,
            iou_pred: out.iou.map(|v| ctx.tape.value(v).to_f64_vec()),
            iou_gt: batch.node_values.clone(),
        };
        Ok((bundle, ctx.tape.value(l).item().as_f64()))
    }
}
