#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tgraphx::model::{ConvPath, PrecisionName};
use tgraphx::nn::heads::Readout;
use tgraphx::tensor::{ParamStore, Shape, Tensor};
use tgraphx::{Graph, ModelConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Random directed graph without self loops; node and graph labels in
/// `0..classes`.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    nodes: usize,
    [c, h, w]: [usize; 3],
    edge_dim: usize,
    edge_prob: f64,
    classes: usize,
) -> Graph<f64> {
    let x = randn(Shape::new(nodes, c, h, w), rng);
    let mut edges = Vec::new();
    for i in 0..nodes {
        for j in 0..nodes {
            if i != j && rng.random_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    let mut g = Graph::new(x, edges);
    if edge_dim > 0 {
        g.edge_features = Some(randn(Shape::matrix(g.num_edges(), edge_dim), rng));
    }
    let labels: Vec<usize> = (0..nodes).map(|_| rng.random_range(0..classes)).collect();
    // The target is one of the graph's node classes, as in detection graphs.
    g.graph_label = Some(labels[rng.random_range(0..nodes)]);
    g.node_labels = Some(labels);
    g
}

/// Adds uniform noise in `±scale` to every trainable parameter, moving
/// gradient checks away from the exact ties of a fresh initialization
/// (zero biases feeding ReLUs).
pub fn jitter_params(p: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let ids: Vec<_> = p.trainable_ids().collect();
    for id in ids {
        for v in p.get_mut(id).data_mut() {
            *v += scale * r.random_range(-1.0..1.0);
        }
    }
}

/// Small double-precision model: 2 residual blocks, 2 GNN layers.
pub fn micro_config(in_channels: usize, classes: usize, edge_dim: usize) -> ModelConfig {
    let mut cfg = ModelConfig {
        precision: PrecisionName::Double,
        in_channels,
        classes,
        edge_dim,
        readout: Readout::Mean,
        conv: ConvPath::Im2col,
        ..ModelConfig::default()
    };
    cfg.encoder.channels = vec![3, 4];
    cfg.encoder.pool_min_spatial = 2;
    cfg.gnn.channels = 4;
    cfg
}

/// Independent direct-summation convolution, written from the definition.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
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

/// Message for one edge from the definition: at every pixel, a weighted sum
/// over the channels of `[x_i, x_j, e_ij]` plus the bias.
pub fn edge_message(x: &Tensor<f64>, i: usize, j: usize, e: &[f64], w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let [_, c, h, wd] = x.shape().0;
    let co = w.shape().n();
    let mut out = vec![0.0; co * h * wd];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b[o];
                for k in 0..c {
                    acc += w.at(o, k, 0, 0) * x.at(i, k, y, xx);
                    acc += w.at(o, c + k, 0, 0) * x.at(j, k, y, xx);
                }
                for (f, &ef) in e.iter().enumerate() {
                    acc += w.at(o, 2 * c + f, 0, 0) * ef;
                }
                out[(o * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

/// Sum (or mean) of incoming messages per node, by scalar loops.
pub fn aggregate_oracle(
    num_nodes: usize,
    edges: &[(usize, usize)],
    messages: &[Vec<f64>],
    plane: usize,
    mean: bool,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; plane]; num_nodes];
    let mut deg = vec![0usize; num_nodes];
    for (e, &(_, j)) in edges.iter().enumerate() {
        deg[j] += 1;
        for (o, m) in out[j].iter_mut().zip(&messages[e]) {
            *o += m;
        }
    }
    if mean {
        for (row, &d) in out.iter_mut().zip(&deg) {
            if d > 0 {
                row.iter_mut().for_each(|v| *v /= d as f64);
            }
        }
    }
    out
}

/// `(1/n) Σ_i −log softmax(s_i)[y_i]` with a direct double loop.
pub fn ce_oracle(logits: &[f64], classes: usize, targets: &[usize]) -> f64 {
    let n = targets.len();
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * classes..(i + 1) * classes];
        let mut z = 0.0;
        for &s in row {
            z += (s - row[targets[i]]).exp();
        }
        total += z.ln();
    }
    total / n as f64
}

/// `(1/n) Σ_i Σ_{k≠y_i} ln(1 + exp(s_ik − s_iy_i))`.
pub fn auc_oracle(logits: &[f64], classes: usize, targets: &[usize]) -> f64 {
    let n = targets.len();
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..classes {
            if k != targets[i] {
                let d = logits[i * classes + k] - logits[i * classes + targets[i]];
                total += if d > 30.0 { d } else { d.exp().ln_1p() };
            }
        }
    }
    total / n as f64
}

pub fn params_equal<T: tgraphx::tensor::Real>(a: &ParamStore<T>, b: &ParamStore<T>) -> bool {
    a.len() == b.len() && a.ids().all(|id| a.get(id) == b.get(id) && a.name(id) == b.name(id))
}

/// Small synthetic detection graphs (32×32 images, 8×8 node crops).
pub fn micro_detection(samples: usize, seed: u64) -> Vec<Graph<f64>> {
    use tgraphx::detfusion::synth::{generate, to_graphs, SynthConfig};
    let cfg = SynthConfig { samples, seed, image_size: 32, ..SynthConfig::default() };
    let s = generate(&cfg).expect("valid synth config");
    to_graphs(&s, 8).expect("graphs").into_iter().map(|d| d.graph).collect()
}

/// `micro_config` for detection graphs with the default node-select readout.
pub fn micro_detection_config() -> ModelConfig {
    ModelConfig {
        readout: Readout::NodeSelect,
        ..micro_config(3, 3, 1)
    }
}
