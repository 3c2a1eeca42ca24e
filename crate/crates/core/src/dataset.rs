use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgraphx_tensor::{derive_seed, Real};

use crate::error::Result;
use crate::graph::{Graph, GraphBatch};

/// An ordered collection of graphs with seeded per-epoch shuffling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphDataset<T> {
    graphs: Vec<Graph<T>>,
}

impl<T: Real> GraphDataset<T> {
    pub fn new(graphs: Vec<Graph<T>>) -> Result<Self> {
        for g in &graphs {
            g.validate()?;
        }
        Ok(GraphDataset { graphs })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Graph<T>] {
        &self.graphs
    }

    pub fn into_graphs(self) -> Vec<Graph<T>> {
        self.graphs
    }

    /// Visiting order for one epoch; a pure function of `(seed, epoch)`.
    pub fn order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.graphs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch]));
        idx.shuffle(&mut rng);
        idx
    }

    pub fn batch(&self, indices: &[usize]) -> Result<GraphBatch<T>> {
        let refs: Vec<&Graph<T>> = indices.iter().map(|&i| &self.graphs[i]).collect();
        GraphBatch::merge_refs(&refs)
    }

    /// Batches in `order`, `batch_size` graphs each (the last may be short).
    pub fn batches<'a>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
    ) -> impl Iterator<Item = Result<GraphBatch<T>>> + 'a {
        order.chunks(batch_size.max(1)).map(|c| self.batch(c))
    }

    /// Batches in storage order.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<Vec<GraphBatch<T>>> {
        let order: Vec<usize> = (0..self.len()).collect();
        self.batches(&order, batch_size).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tgraphx_tensor::{Shape, Tensor};

    #[test]
    fn shuffle_is_reproducible_per_epoch() {
        let graphs = (0..20)
            .map(|i| Graph::new(Tensor::<f64>::full(Shape::new(1, 1, 1, 1), i as f64), vec![]))
            .collect();
        let ds = GraphDataset::new(graphs).unwrap();
        assert_eq!(ds.order(3, 1), ds.order(3, 1));
        assert_ne!(ds.order(3, 1), ds.order(3, 2));
        let mut sorted = ds.order(3, 1);
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        let order = ds.order(0, 0);
        let sizes: Vec<usize> = ds.batches(&order, 8).map(|b| b.unwrap().num_graphs()).collect();
        assert_eq!(sizes, vec![8, 8, 4]);
    }
}
