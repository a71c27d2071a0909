//! Order-preserving parallel map over an index range.
//!
//! Results are collected by index, so any reduction done afterwards in index
//! order is bit-identical for every pool width.

use rayon::prelude::*;

/// `(0..n).map(f)` evaluated on a pool of `jobs` threads (sequentially when
/// `jobs <= 1`).
pub fn map_indexed<T, F>(jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}
