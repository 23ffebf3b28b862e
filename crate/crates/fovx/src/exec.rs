//! Execution strategy for hot kernels.
//!
//! Every data-parallel loop in the crate writes disjoint output chunks
//! (rows, channel planes) and never reduces across threads, so the
//! `parallel` build and the sequential fallback produce bit-identical
//! results. Build with `--no-default-features` to compile the sequential
//! path; the criterion suite carries the active mode in its benchmark ids
//! so the two builds can be compared run against run.

/// Active execution mode, baked in at compile time.
pub const MODE: &str = if cfg!(feature = "parallel") {
    "parallel"
} else {
    "sequential"
};

/// Applies `f` to consecutive `chunk`-sized pieces of `data`, passing the
/// chunk index. `data.len()` must be a multiple of `chunk`.
#[cfg(feature = "parallel")]
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    debug_assert_eq!(data.len() % chunk, 0);
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Sequential fallback with the same contract as the parallel version.
#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert_eq!(data.len() % chunk, 0);
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}
