//! Image tiling into patches and proximity graphs over the patch grid.

use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Real, Shape, Tensor};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadPolicy {
    #[default]
    Error,
    ZeroPad,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Chebyshev,
    #[default]
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let dr = a.0.abs_diff(b.0) as f64;
        let dc = a.1.abs_diff(b.1) as f64;
        match self {
            Metric::Chebyshev => dr.max(dc),
            Metric::Manhattan => dr + dc,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T> {
    /// `[rows·cols, C, patch_h, patch_w]`, patch `(r, c)` at index `r·cols + c`.
    pub patches: Tensor<T>,
    pub rows: usize,
    pub cols: usize,
}

impl<T: Real> PatchGrid<T> {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn positions(&self) -> Vec<(usize, usize)> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }

    /// Stitches the patches back into a `[1, C, rows·ph, cols·pw]` image.
    pub fn reassemble(&self) -> Tensor<T> {
        let [_, c, ph, pw] = self.patches.shape().0;
        let shape = Shape::new(1, c, self.rows * ph, self.cols * pw);
        Tensor::from_fn(shape, |[_, ch, y, x]| {
            let idx = (y / ph) * self.cols + x / pw;
            self.patches.at(idx, ch, y % ph, x % pw)
        })
    }
}

/// Non-overlapping row-major tiling of a `[1, C, H, W]` image.
pub fn extract_patches<T: Real>(img: &Tensor<T>, ph: usize, pw: usize, pad: PadPolicy) -> Result<PatchGrid<T>> {
    let [n, c, h, w] = img.shape().0;
    if n != 1 {
        return Err(Error::data(format!("expected one image, got shape {}", img.shape())));
    }
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::data(format!("patch {ph}x{pw} does not fit image {h}x{w}")));
    }
    if (h % ph != 0 || w % pw != 0) && pad == PadPolicy::Error {
        return Err(Error::data(format!("image {h}x{w} is not divisible into {ph}x{pw} patches")));
    }
    let (rows, cols) = (h.div_ceil(ph), w.div_ceil(pw));
    let patches = Tensor::from_fn(Shape::new(rows * cols, c, ph, pw), |[i, ch, y, x]| {
        let (gy, gx) = ((i / cols) * ph + y, (i % cols) * pw + x);
        if gy < h && gx < w {
            img.at(0, ch, gy, gx)
        } else {
            T::zero()
        }
    });
    Ok(PatchGrid { patches, rows, cols })
}

/// Directed edges `(i, j)`, `i ≠ j`, between grid cells within distance `tau`.
pub fn grid_edges(rows: usize, cols: usize, metric: Metric, tau: f64) -> Vec<(usize, usize)> {
    let pos = |i: usize| (i / cols, i % cols);
    let n = rows * cols;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && metric.distance(pos(i), pos(j)) <= tau {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// `[E, 2]` matrix of `(Δrow, Δcol) = position_j − position_i`.
pub fn positional_edge_features<T: Real>(
    edges: &[(usize, usize)],
    positions: &[(usize, usize)],
) -> Tensor<T> {
    let data = edges
        .iter()
        .flat_map(|&(i, j)| {
            let (a, b) = (positions[i], positions[j]);
            [T::of(b.0 as f64 - a.0 as f64), T::of(b.1 as f64 - a.1 as f64)]
        })
        .collect();
    Tensor::new(Shape::matrix(edges.len(), 2), data).expect("two features per edge")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub metric: Metric,
    pub tau: f64,
    pub pad_policy: PadPolicy,
    pub positional_edges: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            patch_h: 8,
            patch_w: 8,
            metric: Metric::Manhattan,
            tau: 1.0,
            pad_policy: PadPolicy::Error,
            positional_edges: true,
        }
    }
}

/// Tiles `img` and connects the patches into a proximity graph.
pub fn image_to_graph<T: Real>(img: &Tensor<T>, cfg: &PatchConfig) -> Result<Graph<T>> {
    if cfg.tau < 0.0 || !cfg.tau.is_finite() {
        return Err(Error::config(format!("tau must be a non-negative number, got {}", cfg.tau)));
    }
    let grid = extract_patches(img, cfg.patch_h, cfg.patch_w, cfg.pad_policy)?;
    let edges = grid_edges(grid.rows, grid.cols, cfg.metric, cfg.tau);
    let edge_features = cfg
        .positional_edges
        .then(|| positional_edge_features(&edges, &grid.positions()));
    let mut g = Graph::new(grid.patches, edges);
    g.edge_features = edge_features;
    Ok(g)
}
