//! Chunked execution: rayon data-parallel with a sequential fallback.
//!
//! Hot loops (population generation, marginal counting, gradient batches,
//! attack queries) are expressed as a map over fixed-size chunks followed by
//! an in-order fold of the per-chunk results. Chunk boundaries and the fold
//! order are independent of the thread schedule, so sequential and parallel
//! execution produce bit-identical results.
//!
//! With the `parallel` feature disabled the crate compiles without rayon and
//! [`ExecMode::default`] is [`ExecMode::Sequential`].

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How chunked work is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecMode {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        ExecMode::Parallel
    }

    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        ExecMode::Sequential
    }
}

/// Map each index range chunk of `0..n` to a value; results in chunk order.
pub fn map_index_chunks<A, F>(mode: ExecMode, n: usize, chunk: usize, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(std::ops::Range<usize>) -> A + Sync + Send,
{
    assert!(chunk > 0);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    match mode {
        ExecMode::Sequential => starts
            .iter()
            .map(|&s| f(s..(s + chunk).min(n)))
            .collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => starts
            .par_iter()
            .map(|&s| f(s..(s + chunk).min(n)))
            .collect(),
    }
}

/// Map every index of `0..n` to a value; results in index order.
pub fn map_indices<A, F>(mode: ExecMode, n: usize, chunk: usize, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(usize) -> A + Sync + Send,
{
    let nested = map_index_chunks(mode, n, chunk, |range| range.map(&f).collect::<Vec<A>>());
    nested.into_iter().flatten().collect()
}

/// Map chunks of a slice; results in chunk order.
pub fn map_slice_chunks<'a, T, A, F>(
    mode: ExecMode,
    items: &'a [T],
    chunk: usize,
    f: F,
) -> Vec<A>
where
    T: Sync,
    A: Send,
    F: Fn(&'a [T]) -> A + Sync + Send,
{
    assert!(chunk > 0);
    match mode {
        ExecMode::Sequential => items.chunks(chunk).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => items.par_chunks(chunk).map(f).collect(),
    }
}

/// Map chunks and fold the results in chunk order. The fold order is fixed,
/// so floating-point reductions do not depend on the execution mode.
pub fn map_reduce_chunks<'a, T, A, F, R>(
    mode: ExecMode,
    items: &'a [T],
    chunk: usize,
    f: F,
    mut reduce: R,
) -> Option<A>
where
    T: Sync,
    A: Send,
    F: Fn(&'a [T]) -> A + Sync + Send,
    R: FnMut(A, A) -> A,
{
    let parts = map_slice_chunks(mode, items, chunk, f);
    let mut iter = parts.into_iter();
    let first = iter.next()?;
    Some(iter.fold(first, |acc, x| reduce(acc, x)))
}

/// Default work-unit size for per-user loops.
pub const USER_CHUNK: usize = 1024;

/// Default work-unit size for per-term gradient loops.
pub const TERM_CHUNK: usize = 256;
