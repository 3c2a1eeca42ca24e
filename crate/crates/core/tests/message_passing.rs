mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tgraphx::nn::layers::Builder;
use tgraphx::nn::message::{aggregate, Aggregation, ConvMessagePassing, EdgeSet, GnnConfig, GnnLayer};
use tgraphx::gradcheck::check;
use tgraphx::tensor::{Ctx, GradCheckConfig, Mode, ParamStore, Shape, Tensor};
use tgraphx::{Graph, GraphBatch};

fn layer(c_in: usize, edge_dim: usize, cfg: &GnnConfig, seed: u64) -> (GnnLayer, ParamStore<f64>) {
    let mut b = Builder::<f64>::new(seed);
    let l = GnnLayer::build(&mut b, "layer", c_in, edge_dim, cfg).unwrap();
    (l, b.finish())
}

fn nonzero_cfg(c: usize, aggregation: Aggregation) -> GnnConfig {
    GnnConfig {
        channels: c,
        zero_init_last: false,
        aggregation,
        ..GnnConfig::default()
    }
}

fn run_layer(l: &GnnLayer, p: &ParamStore<f64>, g: &Graph<f64>, mode: Mode) -> Tensor<f64> {
    let mut ctx = Ctx::new(p, mode).with_seed(1, 0);
    let x = ctx.tape.constant(g.node_features.clone());
    let es = EdgeSet {
        num_nodes: g.num_nodes(),
        edges: &g.edges,
        features: g.edge_features.as_ref(),
    };
    let y = l.forward(&mut ctx, x, &es).unwrap();
    ctx.tape.value(y).clone()
}

#[test]
fn messages_match_per_edge_loop() {
    let mut r = rng(11);
    for _ in 0..40 {
        let (c, f, co) = (r.random_range(1..4), r.random_range(0..3), r.random_range(1..5));
        let n = r.random_range(2..6);
        let g = random_graph(&mut r, n, [c, 3, 2], f, 0.5, 2);
        let mut b = Builder::<f64>::new(r.random());
        let mp = ConvMessagePassing::build(&mut b, c, co, f).unwrap();
        let p = b.finish();
        let mut ctx = Ctx::new(&p, Mode::Eval);
        let x = ctx.tape.constant(g.node_features.clone());
        let es = EdgeSet {
            num_nodes: n,
            edges: &g.edges,
            features: g.edge_features.as_ref(),
        };
        let Some(m) = mp.forward(&mut ctx, x, &es).unwrap() else {
            assert!(g.edges.is_empty());
            continue;
        };
        let m = ctx.tape.value(m).clone();
        let (w, bias) = (p.get(mp.conv.w), p.get(mp.conv.b.unwrap()).data());
        for (e, &(i, j)) in g.edges.iter().enumerate() {
            let ef: Vec<f64> = (0..f).map(|k| g.edge_features.as_ref().unwrap().at(e, k, 0, 0)).collect();
            let want = edge_message(&g.node_features, i, j, &ef, w, bias);
            let got = &m.data()[e * want.len()..(e + 1) * want.len()];
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn aggregation_matches_scalar_loop() {
    let mut r = rng(12);
    for mean in [false, true] {
        for _ in 0..20 {
            let n = r.random_range(1..7);
            let g = random_graph(&mut r, n, [2, 2, 3], 0, 0.4, 2);
            let p = ParamStore::<f64>::new();
            let mut ctx = Ctx::new(&p, Mode::Eval);
            let plane = 2 * 2 * 3;
            let msgs: Vec<Vec<f64>> = g.edges.iter().map(|_| (0..plane).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let mv = (!msgs.is_empty()).then(|| {
                ctx.tape
                    .constant(Tensor::new(Shape::new(msgs.len(), 2, 2, 3), msgs.concat()).unwrap())
            });
            let es = EdgeSet {
                num_nodes: n,
                edges: &g.edges,
                features: None,
            };
            let mode = if mean { Aggregation::Mean } else { Aggregation::Sum };
            let out = aggregate(&mut ctx, mv, &es, Shape::new(n, 2, 2, 3), mode).unwrap();
            let want = aggregate_oracle(n, &g.edges, &msgs, plane, mean).concat();
            let got = ctx.tape.value(out).data();
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_initialized_aggregator_is_identity() {
    let mut r = rng(13);
    for mode in [Mode::Eval, Mode::Train] {
        let cfg = GnnConfig {
            channels: 3,
            aggregator_depth: 2,
            ..GnnConfig::default()
        };
        let (l, p) = layer(3, 1, &cfg, 5);
        let g = random_graph(&mut r, 4, [3, 4, 4], 1, 0.7, 2);
        assert_eq!(run_layer(&l, &p, &g, mode), g.node_features);
    }
}

#[test]
fn nodes_without_incoming_edges_see_only_themselves() {
    let mut r = rng(14);
    let (l, p) = layer(2, 1, &nonzero_cfg(2, Aggregation::Sum), 3);
    // Node 0 has no incoming edges; node 2 receives only from node 1.
    let mut g = random_graph(&mut r, 4, [2, 3, 3], 1, 0.0, 2);
    g.edges = vec![(0, 1), (1, 2), (3, 1)];
    g.edge_features = Some(randn(Shape::matrix(3, 1), &mut r));
    let before = run_layer(&l, &p, &g, Mode::Eval);
    let mut h = g.clone();
    for i in [1, 3] {
        let perturbed = randn(Shape::new(1, 2, 3, 3), &mut r);
        let item = 2 * 3 * 3;
        h.node_features.data_mut()[i * item..(i + 1) * item].copy_from_slice(perturbed.data());
    }
    let after = run_layer(&l, &p, &h, Mode::Eval);
    assert_eq!(before.slice_n(0, 1), after.slice_n(0, 1));
    assert_ne!(before.slice_n(2, 3), after.slice_n(2, 3));
    // Changing node 3 alone leaves node 2 untouched.
    let mut k = g.clone();
    let item = 2 * 3 * 3;
    k.node_features.data_mut()[3 * item..].iter_mut().for_each(|v| *v += 1.0);
    let after = run_layer(&l, &p, &k, Mode::Eval);
    assert_eq!(before.slice_n(2, 3), after.slice_n(2, 3));
}

#[test]
fn merged_batch_matches_separate_graphs() {
    let mut r = rng(15);
    let (l, p) = layer(3, 2, &nonzero_cfg(4, Aggregation::Mean), 8);
    let graphs: Vec<_> = (0..4)
        .map(|_| {
            let n = r.random_range(1..5);
            random_graph(&mut r, n, [3, 3, 3], 2, 0.5, 2)
        })
        .collect();
    let batch = GraphBatch::merge(&graphs).unwrap();
    let mut merged = Graph::new(batch.node_features.clone(), batch.edges.clone());
    merged.edge_features = batch.edge_features.clone();
    let out = run_layer(&l, &p, &merged, Mode::Eval);
    for (gi, g) in graphs.iter().enumerate() {
        let nodes = batch.nodes_of(gi);
        let alone = run_layer(&l, &p, g, Mode::Eval);
        let diff = out.slice_n(nodes.start, nodes.end).max_abs_diff(&alone).unwrap();
        assert!(diff < 1e-12, "graph {gi}: {diff}");
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut r = rng(16);
    for (mode, aggregation) in [(Mode::Eval, Aggregation::Sum), (Mode::Train, Aggregation::Mean)] {
        let cfg = GnnConfig {
            aggregator_depth: 2,
            ..nonzero_cfg(3, aggregation)
        };
        let (l, p) = layer(2, 1, &cfg, 21);
        let g = random_graph(&mut r, 3, [2, 3, 3], 1, 0.8, 2);
        let weights = randn(Shape::new(3, 3, 3, 3), &mut r);
        let gc = GradCheckConfig {
            mode,
            ..GradCheckConfig::default()
        };
        let report = check(&p, gc, |ctx| {
            let x = ctx.tape.constant(g.node_features.clone());
            let es = EdgeSet {
                num_nodes: 3,
                edges: &g.edges,
                features: g.edge_features.as_ref(),
            };
            let y = l.forward(ctx, x, &es)?;
            let w = ctx.tape.constant(weights.clone());
            let prod = ctx.tape.mul(y, w)?;
            Ok(ctx.tape.sum_all(prod)?)
        })
        .unwrap();
        assert!(report.passed(), "{mode:?}: {:#?}", report.params);
        assert!(report.params.iter().any(|c| c.max_abs_analytic > 0.0));
    }
}

fn permute(g: &Graph<f64>, perm: &[usize]) -> Graph<f64> {
    // Node `i` moves to position `perm[i]`.
    let n = g.num_nodes();
    let item = g.node_features.shape().item();
    let mut data = vec![0.0; n * item];
    for i in 0..n {
        data[perm[i] * item..(perm[i] + 1) * item].copy_from_slice(&g.node_features.data()[i * item..(i + 1) * item]);
    }
    let mut h = Graph::new(
        Tensor::new(g.node_features.shape(), data).unwrap(),
        g.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect(),
    );
    h.edge_features = g.edge_features.clone();
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relabelling_nodes_permutes_outputs(seed in any::<u64>(), n in 2usize..6, mean in any::<bool>()) {
        let mut r = rng(seed);
        let agg = if mean { Aggregation::Mean } else { Aggregation::Sum };
        let (l, p) = layer(2, 1, &nonzero_cfg(3, agg), seed);
        let g = random_graph(&mut r, n, [2, 2, 2], 1, 0.6, 2);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut r);
        let out = run_layer(&l, &p, &g, Mode::Eval);
        let out_p = run_layer(&l, &p, &permute(&g, &perm), Mode::Eval);
        for (i, &j) in perm.iter().enumerate() {
            let d = out.slice_n(i, i + 1).max_abs_diff(&out_p.slice_n(j, j + 1)).unwrap();
            prop_assert!(d < 1e-12);
        }
    }

    #[test]
    fn edge_order_is_irrelevant(seed in any::<u64>(), n in 2usize..6) {
        let mut r = rng(seed);
        let (l, p) = layer(2, 1, &nonzero_cfg(2, Aggregation::Sum), seed);
        let g = random_graph(&mut r, n, [2, 2, 2], 1, 0.6, 2);
        let mut order: Vec<usize> = (0..g.num_edges()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut r);
        let mut h = g.clone();
        h.edges = order.iter().map(|&e| g.edges[e]).collect();
        let ef = g.edge_features.as_ref().unwrap();
        h.edge_features = Some(Tensor::new(ef.shape(), order.iter().map(|&e| ef.at(e, 0, 0, 0)).collect()).unwrap());
        let d = run_layer(&l, &p, &g, Mode::Eval).max_abs_diff(&run_layer(&l, &p, &h, Mode::Eval)).unwrap();
        prop_assert!(d < 1e-12);
    }
}
