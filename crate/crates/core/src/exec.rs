//! Execution-mode plumbing: rayon data-parallel loops with a sequential
//! fallback when the `parallel` feature is disabled.
//!
//! Every helper here is deterministic by construction: parallel maps collect
//! in index order and reductions happen over fixed-size chunks combined in
//! chunk order, so results are bit-identical run-to-run and across thread
//! counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel sections execute. `Parallel` falls back to sequential
/// execution when the crate is built without the `parallel` feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

/// Fixed chunk size for ordered gradient reductions.
pub(crate) const GRAD_CHUNK: usize = 256;

/// Map `0..n` and collect results in index order.
pub(crate) fn map_collect<R, F>(par: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        Parallelism::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

/// Run `f` over every item of `items`, possibly in parallel.
pub(crate) fn for_each_mut<I, F>(par: Parallelism, items: &mut [I], f: F)
where
    I: Send,
    F: Fn(&mut I) + Sync + Send,
{
    match par {
        Parallelism::Sequential => items.iter_mut().for_each(f),
        Parallelism::Parallel => {
            #[cfg(feature = "parallel")]
            {
                items.par_iter_mut().for_each(f);
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter_mut().for_each(f);
            }
        }
    }
}

/// Chunked map-reduce over `0..n` with a deterministic combine order:
/// `f` fills a fresh accumulator per fixed-size chunk, and the per-chunk
/// accumulators are folded sequentially in chunk order.
pub(crate) fn chunked_reduce<A, F>(par: Parallelism, n: usize, make: impl Fn() -> A + Sync, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(&mut A, std::ops::Range<usize>) + Sync,
{
    let chunks = n.div_ceil(GRAD_CHUNK).max(1);
    map_collect(par, chunks, |c| {
        let lo = c * GRAD_CHUNK;
        let hi = ((c + 1) * GRAD_CHUNK).min(n);
        let mut acc = make();
        f(&mut acc, lo..hi);
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let seq = map_collect(Parallelism::Sequential, 100, |i| i * i);
        let par = map_collect(Parallelism::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn chunked_reduce_covers_all_indices() {
        let parts = chunked_reduce(Parallelism::Parallel, 1000, Vec::new, |acc, range| {
            acc.extend(range)
        });
        let all: Vec<usize> = parts.into_iter().flatten().collect();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }
}
