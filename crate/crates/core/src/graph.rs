//! Graphs whose nodes carry `[C, H, W]` feature maps, and batches of them.
//!
//! A batch concatenates node features along the leading axis and shifts each
//! graph's edge endpoints by the number of nodes that precede it, so a batch
//! is itself one (disconnected) graph.

use std::ops::Range;

use tgraphx_tensor::{Real, Shape, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    /// `[N, C, H, W]`.
    pub node_features: Tensor<T>,
    /// Directed `(source, destination)` pairs.
    pub edges: Vec<(usize, usize)>,
    /// `[E, F]` matrix, one row per edge.
    pub edge_features: Option<Tensor<T>>,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
    /// Per-node regression targets (IoU against ground truth for detection graphs).
    pub node_values: Option<Vec<f64>>,
    pub id: Option<String>,
}

impl<T: Real> Graph<T> {
    pub fn new(node_features: Tensor<T>, edges: Vec<(usize, usize)>) -> Self {
        Graph {
            node_features,
            edges,
            edge_features: None,
            node_labels: None,
            graph_label: None,
            node_values: None,
            id: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.shape().n()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `(C, H, W)` of every node.
    pub fn node_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.node_features.shape().0;
        [c, h, w]
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.as_ref().map_or(0, |e| e.shape().c())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::graph("graph has no nodes"));
        }
        if let Some(&(s, d)) = self.edges.iter().find(|&&(s, d)| s >= n || d >= n) {
            return Err(Error::graph(format!("edge ({s}, {d}) out of range for {n} nodes")));
        }
        if let Some(ef) = &self.edge_features {
            let s = ef.shape();
            if s.n() != self.edges.len() || s.h() != 1 || s.w() != 1 {
                return Err(Error::graph(format!(
                    "edge features {s} for {} edges",
                    self.edges.len()
                )));
            }
        }
        if let Some(l) = &self.node_labels {
            if l.len() != n {
                return Err(Error::graph(format!("{} node labels for {n} nodes", l.len())));
            }
        }
        if let Some(v) = &self.node_values {
            if v.len() != n {
                return Err(Error::graph(format!("{} node values for {n} nodes", v.len())));
            }
        }
        Ok(())
    }

    /// For each destination `j`, the `(source, edge position)` pairs of its
    /// incoming edges in edge order.
    pub fn neighborhoods(&self) -> Vec<Vec<(usize, usize)>> {
        neighborhoods(self.num_nodes(), &self.edges)
    }
}

pub fn neighborhoods(num_nodes: usize, edges: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new(); num_nodes];
    for (pos, &(s, d)) in edges.iter().enumerate() {
        out[d].push((s, pos));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch<T> {
    pub node_features: Tensor<T>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Option<Tensor<T>>,
    /// First merged node index of each graph.
    pub node_offsets: Vec<usize>,
    /// First merged edge index of each graph.
    pub edge_offsets: Vec<usize>,
    /// Graph membership of every merged node.
    pub graph_ids: Vec<usize>,
    pub node_labels: Option<Vec<usize>>,
    pub graph_labels: Vec<Option<usize>>,
    pub node_values: Option<Vec<f64>>,
    pub ids: Vec<Option<String>>,
}

impl<T: Real> GraphBatch<T> {
    pub fn merge(graphs: &[Graph<T>]) -> Result<Self> {
        Self::merge_refs(&graphs.iter().collect::<Vec<_>>())
    }

    pub fn merge_refs(graphs: &[&Graph<T>]) -> Result<Self> {
        let first = graphs.first().ok_or_else(|| Error::graph("cannot merge zero graphs"))?;
        for g in graphs {
            g.validate()?;
            if g.node_shape() != first.node_shape() {
                return Err(Error::graph(format!(
                    "node shape {:?} differs from {:?}",
                    g.node_shape(),
                    first.node_shape()
                )));
            }
            if g.edge_features.is_some() != first.edge_features.is_some() || g.edge_dim() != first.edge_dim() {
                return Err(Error::graph("edge features differ between graphs"));
            }
            if g.node_labels.is_some() != first.node_labels.is_some()
                || g.node_values.is_some() != first.node_values.is_some()
            {
                return Err(Error::graph("node annotations differ between graphs"));
            }
        }

        let features: Vec<&Tensor<T>> = graphs.iter().map(|g| &g.node_features).collect();
        let node_features = Tensor::cat_n(&features)?;
        let mut edges = Vec::new();
        let mut node_offsets = Vec::with_capacity(graphs.len());
        let mut edge_offsets = Vec::with_capacity(graphs.len());
        let mut graph_ids = Vec::with_capacity(node_features.shape().n());
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            node_offsets.push(offset);
            edge_offsets.push(edges.len());
            edges.extend(g.edges.iter().map(|&(s, d)| (s + offset, d + offset)));
            graph_ids.extend(std::iter::repeat_n(gi, g.num_nodes()));
            offset += g.num_nodes();
        }
        let edge_features = match first.edge_features {
            Some(_) => {
                let f = first.edge_dim();
                let mut data = Vec::with_capacity(edges.len() * f);
                for g in graphs {
                    data.extend_from_slice(g.edge_features.as_ref().expect("checked above").data());
                }
                Some(Tensor::new(Shape::matrix(edges.len(), f), data)?)
            }
            None => None,
        };
        let node_labels = first
            .node_labels
            .as_ref()
            .map(|_| graphs.iter().flat_map(|g| g.node_labels.clone().unwrap_or_default()).collect());
        let node_values = first
            .node_values
            .as_ref()
            .map(|_| graphs.iter().flat_map(|g| g.node_values.clone().unwrap_or_default()).collect());
        Ok(GraphBatch {
            node_features,
            edges,
            edge_features,
            node_offsets,
            edge_offsets,
            graph_ids,
            node_labels,
            graph_labels: graphs.iter().map(|g| g.graph_label).collect(),
            node_values,
            ids: graphs.iter().map(|g| g.id.clone()).collect(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.shape().n()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Merged node indices of graph `g`.
    pub fn nodes_of(&self, g: usize) -> Range<usize> {
        let end = self.node_offsets.get(g + 1).copied().unwrap_or(self.num_nodes());
        self.node_offsets[g]..end
    }

    pub fn edges_of(&self, g: usize) -> Range<usize> {
        let end = self.edge_offsets.get(g + 1).copied().unwrap_or(self.num_edges());
        self.edge_offsets[g]..end
    }

    /// Recovers the merged graphs. Fails if the offsets are inconsistent.
    pub fn split(&self) -> Result<Vec<Graph<T>>> {
        let g_count = self.num_graphs();
        let consistent = self.node_offsets.first() == Some(&0)
            && self.edge_offsets.first() == Some(&0)
            && self.node_offsets.windows(2).all(|w| w[0] < w[1])
            && self.edge_offsets.windows(2).all(|w| w[0] <= w[1])
            && self.node_offsets.last().is_some_and(|&o| o < self.num_nodes())
            && self.edge_offsets.last().is_some_and(|&o| o <= self.num_edges())
            && self.edge_offsets.len() == g_count
            && self.graph_labels.len() == g_count
            && self.ids.len() == g_count
            && self.graph_ids.len() == self.num_nodes();
        if !consistent {
            return Err(Error::graph("corrupted batch offsets"));
        }
        let f = self.edge_features.as_ref().map(|e| e.shape().c());
        let mut out = Vec::with_capacity(g_count);
        for g in 0..g_count {
            let nodes = self.nodes_of(g);
            let edge_range = self.edges_of(g);
            let off = nodes.start;
            let mut edges = Vec::with_capacity(edge_range.len());
            for &(s, d) in &self.edges[edge_range.clone()] {
                if !nodes.contains(&s) || !nodes.contains(&d) {
                    return Err(Error::graph(format!("edge ({s}, {d}) crosses graph {g}")));
                }
                edges.push((s - off, d - off));
            }
            let edge_features = match (f, &self.edge_features) {
                (Some(f), Some(ef)) => Some(Tensor::new(
                    Shape::matrix(edge_range.len(), f),
                    ef.data()[edge_range.start * f..edge_range.end * f].to_vec(),
                )?),
                _ => None,
            };
            out.push(Graph {
                node_features: self.node_features.slice_n(nodes.start, nodes.end),
                edges,
                edge_features,
                node_labels: self.node_labels.as_ref().map(|l| l[nodes.clone()].to_vec()),
                graph_label: self.graph_labels[g],
                node_values: self.node_values.as_ref().map(|v| v[nodes.clone()].to_vec()),
                id: self.ids[g].clone(),
            });
        }
        Ok(out)
    }
}
