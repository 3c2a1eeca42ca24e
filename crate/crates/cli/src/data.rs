//! Locating and loading graph splits.

use std::path::{Path, PathBuf};

use tgraphx::detfusion::graph::load_detection_split;
use tgraphx::graph_io::load_graphs;
use tgraphx::tensor::Real;
use tgraphx::{Graph, GraphDataset, ModelConfig};

use crate::fail::Failure;

/// Graphs of one split directory: built from `detections.jsonl`,
/// `ground_truth.jsonl` and `images/` when present (crops of
/// `node_size`), else read from `graphs.jsonl`.
pub fn load_split<T: Real>(dir: &Path, node_size: usize) -> Result<Vec<Graph<T>>, Failure> {
    if dir.join("detections.jsonl").is_file() {
        log::info!("{}: building detection graphs ({node_size}x{node_size} crops)", dir.display());
        Ok(load_detection_split::<T>(dir, node_size)?.into_iter().map(|s| s.graph).collect())
    } else if dir.join("graphs.jsonl").is_file() {
        Ok(load_graphs(dir.join("graphs.jsonl"))?)
    } else if dir.is_file() {
        Ok(load_graphs(dir)?)
    } else {
        Err(Failure::Data(format!(
            "{}: expected detections.jsonl or graphs.jsonl",
            dir.display()
        )))
    }
}

/// Rejects graphs the model cannot consume before any work is done.
pub fn check_compatible<T: Real>(cfg: &ModelConfig, graphs: &[Graph<T>], what: &str) -> Result<(), Failure> {
    for (i, g) in graphs.iter().enumerate() {
        let c = g.node_features.shape().c();
        if c != cfg.in_channels {
            return Err(Failure::Data(format!(
                "{what} graph {i}: {c} feature channels, model expects {}",
                cfg.in_channels
            )));
        }
        if let Some(e) = &g.edge_features {
            let d = e.shape().c();
            if d != cfg.edge_dim {
                return Err(Failure::Data(format!(
                    "{what} graph {i}: edge dim {d}, model expects {}",
                    cfg.edge_dim
                )));
            }
        }
    }
    Ok(())
}

pub fn dataset<T: Real>(graphs: Vec<Graph<T>>) -> Result<GraphDataset<T>, Failure> {
    Ok(GraphDataset::new(graphs)?)
}

/// `(train, val)` split directories: `<dir>/train` and `<dir>/val` when
/// `<dir>/train` exists, otherwise `<dir>` alone.
pub fn train_val_dirs(dir: &Path) -> (PathBuf, Option<PathBuf>) {
    let train = dir.join("train");
    if train.is_dir() {
        let val = dir.join("val");
        (train, val.is_dir().then_some(val))
    } else {
        (dir.to_path_buf(), None)
    }
}

/// Spatial size shared by all nodes, if any.
pub fn node_spatial<T: Real>(graphs: &[Graph<T>]) -> Option<(usize, usize)> {
    let s = graphs.first()?.node_features.shape();
    Some((s.h(), s.w()))
}
