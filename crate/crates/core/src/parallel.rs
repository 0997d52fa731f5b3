//! Chunked data-parallel helpers.
//!
//! Every batched computation in the crate is split into fixed-size row chunks.
//! Chunks are processed either sequentially or on the rayon pool, and results
//! always come back in chunk order, so reductions are bitwise identical across
//! backends and thread counts. The `parallel` cargo feature gates rayon; without
//! it only the sequential backend exists.

use std::ops::Range;
use std::sync::atomic::{AtomicU8, Ordering};

/// Rows per work unit. Fixed so that summation order never depends on threads.
pub const CHUNK_ROWS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static BACKEND: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") {
    PARALLEL
} else {
    SEQUENTIAL
});

pub fn backend() -> Backend {
    match BACKEND.load(Ordering::Relaxed) {
        #[cfg(feature = "parallel")]
        PARALLEL => Backend::Parallel,
        _ => Backend::Sequential,
    }
}

/// Select the process-wide backend. Results do not depend on the choice.
pub fn set_backend(backend: Backend) {
    let tag = match backend {
        Backend::Sequential => SEQUENTIAL,
        #[cfg(feature = "parallel")]
        Backend::Parallel => PARALLEL,
    };
    BACKEND.store(tag, Ordering::Relaxed);
}

/// Split `0..n` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Apply `f` to every chunk of `0..n`, returning results in chunk order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(n, chunk);
    match backend() {
        Backend::Sequential => ranges.into_iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Backend::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(f).collect()
        }
    }
}

/// Sum `f` over chunks of `0..n` in a fixed left-to-right order.
pub fn sum_chunks<F>(n: usize, chunk: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    map_chunks(n, chunk, f).into_iter().fold(0.0, |acc, x| acc + x)
}
