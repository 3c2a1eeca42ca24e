mod common;

use common::*;
use proptest::prelude::*;
use tgraphx::graph::neighborhoods;
use tgraphx::graph_io::{from_json_line, load_graphs, save_graphs, to_json_line, Encoding};
use tgraphx::tensor::{Shape, Tensor};
use tgraphx::{Graph, GraphBatch, GraphDataset};

fn bare(n: usize, edges: Vec<(usize, usize)>) -> Graph<f64> {
    Graph::new(Tensor::from_fn(Shape::new(n, 1, 1, 1), |[i, ..]| i as f64), edges)
}

#[test]
fn validation_examples() {
    assert!(bare(1, vec![]).validate().is_ok());
    assert!(bare(3, vec![(0, 5)]).validate().is_err());
    let mut g = bare(3, vec![(0, 2), (1, 2)]);
    g.edge_features = Some(Tensor::zeros(Shape::matrix(2, 1)));
    assert!(g.validate().is_ok());
    g.edge_features = Some(Tensor::zeros(Shape::matrix(3, 1)));
    assert!(g.validate().is_err());
    assert!(Graph::new(Tensor::<f64>::zeros(Shape::new(0, 1, 1, 1)), vec![]).validate().is_err());
    let mut g = bare(2, vec![]);
    g.node_labels = Some(vec![0]);
    assert!(g.validate().is_err());
}

#[test]
fn merge_offsets_are_prefix_sums() {
    let b = GraphBatch::merge(&[bare(3, vec![(0, 1)]), bare(4, vec![(0, 1)])]).unwrap();
    assert_eq!(b.node_offsets, vec![0, 3]);
    assert_eq!(b.edges, vec![(0, 1), (3, 4)]);
    let b = GraphBatch::merge(&[bare(2, vec![]), bare(2, vec![]), bare(2, vec![])]).unwrap();
    assert_eq!(b.node_offsets, vec![0, 2, 4]);
    assert_eq!(b.graph_ids, vec![0, 0, 1, 1, 2, 2]);
    let single = bare(3, vec![(2, 0)]);
    let b = GraphBatch::merge(std::slice::from_ref(&single)).unwrap();
    assert_eq!(b.node_offsets, vec![0]);
    assert_eq!(b.split().unwrap(), vec![single]);
}

#[test]
fn heterogeneous_graphs_do_not_merge() {
    let a = bare(2, vec![]);
    let b = Graph::new(Tensor::<f64>::zeros(Shape::new(2, 2, 1, 1)), vec![]);
    assert!(GraphBatch::merge(&[a.clone(), b]).is_err());
    let mut c = bare(2, vec![(0, 1)]);
    c.edge_features = Some(Tensor::zeros(Shape::matrix(1, 2)));
    assert!(GraphBatch::merge(&[a.clone(), c]).is_err());
    assert!(GraphBatch::<f64>::merge(&[]).is_err());
}

#[test]
fn corrupted_offsets_fail_to_split() {
    let mut b = GraphBatch::merge(&[bare(2, vec![(0, 1)]), bare(2, vec![(1, 0)])]).unwrap();
    b.node_offsets[1] = 5;
    assert!(b.split().is_err());
    let mut b = GraphBatch::merge(&[bare(2, vec![(0, 1)]), bare(2, vec![(1, 0)])]).unwrap();
    b.edges[0] = (0, 3);
    assert!(b.split().is_err());
}

#[test]
fn neighborhood_examples() {
    let n = neighborhoods(3, &[(0, 2), (1, 2)]);
    assert_eq!(n, vec![vec![], vec![], vec![(0, 0), (1, 1)]]);
    assert!(neighborhoods(3, &[]).iter().all(Vec::is_empty));
    assert_eq!(neighborhoods(2, &[(1, 1)])[1], vec![(1, 0)]);
}

#[test]
fn dataset_order_is_a_seeded_permutation() {
    let ds = GraphDataset::new((0..30).map(|i| bare(1 + i % 3, vec![])).collect()).unwrap();
    let o = ds.order(5, 2);
    let mut sorted = o.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..30).collect::<Vec<_>>());
    assert_eq!(o, ds.order(5, 2));
    assert_ne!(o, ds.order(6, 2));
    let batches: Vec<_> = ds.batches(&o, 8).collect::<Result<_, _>>().unwrap();
    assert_eq!(batches.iter().map(|b| b.num_graphs()).collect::<Vec<_>>(), vec![8, 8, 8, 6]);
    assert!(GraphDataset::new(vec![bare(2, vec![(0, 9)])]).is_err());
}

#[test]
fn graph_files_round_trip() {
    let mut r = rng(3);
    let graphs: Vec<_> = (0..5).map(|i| random_graph(&mut r, 1 + i, [2, 3, 2], i % 2, 0.5, 3)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graphs.jsonl");
    save_graphs(&path, &graphs, Encoding::Base64F64).unwrap();
    assert_eq!(load_graphs::<f64>(&path).unwrap(), graphs);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.contains("\"version\":1")));
    let line = to_json_line(&graphs[0], Encoding::List).unwrap();
    assert_eq!(from_json_line::<f64>(&line).unwrap(), graphs[0]);
    assert!(from_json_line::<f64>("{\"version\":1}").is_err());
}

fn arb_graphs() -> impl Strategy<Value = Vec<Graph<f64>>> {
    (any::<u64>(), 1usize..6, 0usize..3).prop_map(|(seed, count, f)| {
        let mut r = rng(seed);
        (0..count)
            .map(|i| random_graph(&mut r, 1 + (seed as usize + i) % 5, [2, 2, 1], f, 0.4, 3))
            .collect()
    })
}

proptest! {
    #[test]
    fn split_inverts_merge(gs in arb_graphs()) {
        let b = GraphBatch::merge(&gs).unwrap();
        prop_assert_eq!(b.split().unwrap(), gs.clone());
        prop_assert_eq!(b.num_nodes(), gs.iter().map(Graph::num_nodes).sum::<usize>());
        prop_assert_eq!(b.num_edges(), gs.iter().map(Graph::num_edges).sum::<usize>());
        let again = GraphBatch::merge(&b.split().unwrap()).unwrap();
        prop_assert_eq!(again, b);
    }

    #[test]
    fn merged_edges_stay_inside_their_graph(gs in arb_graphs()) {
        let b = GraphBatch::merge(&gs).unwrap();
        for &(s, d) in &b.edges {
            prop_assert_eq!(b.graph_ids[s], b.graph_ids[d]);
        }
        for (g, graph) in gs.iter().enumerate() {
            for (k, &(s, d)) in graph.edges.iter().enumerate() {
                prop_assert_eq!(b.edges[b.edge_offsets[g] + k], (b.node_offsets[g] + s, b.node_offsets[g] + d));
            }
        }
    }

    #[test]
    fn neighborhoods_partition_the_edges(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, [1, 1, 1], 0, 0.5, 2);
        let nb = g.neighborhoods();
        let mut seen: Vec<usize> = nb.iter().flatten().map(|&(_, e)| e).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..g.num_edges()).collect::<Vec<_>>());
        for (j, list) in nb.iter().enumerate() {
            for w in list.windows(2) {
                prop_assert!(w[0].1 < w[1].1);
            }
            for &(s, e) in list {
                prop_assert_eq!(g.edges[e], (s, j));
            }
        }
    }
}
