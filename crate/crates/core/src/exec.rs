//! Sequential and data-parallel execution of order-preserving maps.
//!
//! Sample-level reductions are split into fixed-size chunks. Each chunk is
//! reduced sequentially and the chunk partials are combined in chunk order, so
//! results are bit-identical whichever execution mode is chosen.

use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Samples per reduction chunk. Fixed at build time so the summation order
/// never depends on the thread count.
pub const CHUNK_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Whether work will actually be distributed over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..count`, returning results in index order.
pub fn map_ordered<T, F>(count: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && count > 1 {
        use rayon::prelude::*;
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..count).map(f).collect()
}

/// Splits `0..len` into [`CHUNK_SIZE`] ranges and maps `f` over them in order.
pub fn map_chunks<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK_SIZE);
    map_ordered(chunks, exec, |c| {
        let start = c * CHUNK_SIZE;
        f(start..(start + CHUNK_SIZE).min(len))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let ranges = map_chunks(1300, Execution::Parallel, |r| r);
        assert_eq!(ranges, vec![0..512, 512..1024, 1024..1300]);
        assert!(map_chunks(0, Execution::Sequential, |r| r).is_empty());
    }

    #[test]
    fn parallel_and_sequential_sums_agree_bitwise() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let sum = |exec| -> f64 {
            map_chunks(xs.len(), exec, |r| xs[r].iter().sum::<f64>())
                .into_iter()
                .sum()
        };
        assert_eq!(
            sum(Execution::Sequential).to_bits(),
            sum(Execution::Parallel).to_bits()
        );
    }
}
