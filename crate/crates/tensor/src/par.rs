//! Data-parallel loop helpers.
//!
//! Every kernel partitions its *output* into disjoint chunks and computes each
//! chunk with a fixed sequential summation order, so parallel and sequential
//! execution are bitwise identical. Reductions that cross chunks (weight
//! gradients summed over a batch) are collected per chunk and folded in index
//! order afterwards.
//!
//! Parallelism needs the `parallel` cargo feature and can additionally be
//! switched off at runtime with [`set_parallel`], which the benchmarks use to
//! compare both paths in one binary.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(true);

pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Runs `f(chunk_index, chunk)` over `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// `(0..len).map(f).collect()`, preserving order.
pub fn map_indexed<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..len).into_par_iter().map(f).collect();
    }
    (0..len).map(f).collect()
}
