//! Execution strategy for the data-parallel loops.
//!
//! Every reduction splits its input into fixed-size chunks, folds each chunk
//! sequentially and then folds the chunk partials in chunk order. The result
//! is therefore identical for [`Execution::Sequential`] and
//! [`Execution::Parallel`] and for any worker count.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per reduction chunk.
pub const CHUNK_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
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

pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(len))
        .collect()
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Applies `f` to every chunk of `0..len` and returns the partials in chunk order.
pub fn map_chunks<R, F>(len: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    let ranges = chunk_ranges(len, CHUNK_ROWS);
    map(&ranges, exec, |r| f(r.clone()))
}

/// Runs `f` inside a pool of `workers` threads (no-op wrapper without the
/// `parallel` feature).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {workers}-thread pool ({e}); using the global pool");
                f()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        let r = chunk_ranges(130, 64);
        assert_eq!(r, vec![0..64, 64..128, 128..130]);
        assert!(chunk_ranges(0, 64).is_empty());
    }

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(&xs, Execution::Parallel, |x| x * x);
        let b = map(&xs, Execution::Sequential, |x| x * x);
        assert_eq!(a, b);
    }
}
