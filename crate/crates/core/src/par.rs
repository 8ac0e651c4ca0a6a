//! Data-parallel helpers. With the `parallel` feature the maps run on the
//! rayon pool; the `seq_*` variants are always compiled so the two paths can
//! be benchmarked against each other from one binary.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Route the parallel helpers through the sequential path at run time.
/// Results are identical either way; only scheduling changes.
pub fn set_force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

pub fn force_sequential() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Evaluate `f(i)` for `i in 0..n` and collect in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if force_sequential() {
            return seq_map_indexed(n, f);
        }
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq_map_indexed(n, f)
    }
}

pub fn seq_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Fill `out[i] = f(i)` in chunks of `chunk` elements.
pub fn fill_chunked<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        if force_sequential() {
            return seq_fill_chunked(out, chunk, f);
        }
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, slice)| f(c * chunk, slice));
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq_fill_chunked(out, chunk, f)
    }
}

pub fn seq_fill_chunked<T, F>(out: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    let chunk = chunk.max(1);
    for (c, slice) in out.chunks_mut(chunk).enumerate() {
        f(c * chunk, slice);
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
