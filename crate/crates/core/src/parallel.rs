//! Thin switch between rayon and sequential iteration.
//!
//! Every helper here preserves element order, so reductions performed on the
//! collected output are bit-identical with or without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum slice length before work is split across threads.
pub const MIN_PAR_LEN: usize = 1024;

/// `out[i] = f(i)` for `i in 0..n`.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= MIN_PAR_LEN {
            return (0..n).into_par_iter().with_min_len(256).map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Fill `out` in place with `f(i, &mut out[i])` over fixed-size chunks.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        if out.len() >= MIN_PAR_LEN || out.len() / chunk >= 4 {
            out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
    }
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Number of worker threads available to data-parallel kernels.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
