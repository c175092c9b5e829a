//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! the rayon pool; without it, or when [`Execution::Sequential`] is requested,
//! the same closures run in a plain loop. Results always come back in index
//! order, so outputs never depend on the execution mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
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
    /// True when work will actually be distributed.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps over a slice, preserving order.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Splits `items` into `chunk` sized pieces, maps each, and folds the partial
/// results left to right with `combine`.
pub fn map_chunks_reduce<T, R, F, C>(
    exec: Execution,
    items: &[T],
    chunk: usize,
    f: F,
    init: R,
    combine: C,
) -> R
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
    C: Fn(R, R) -> R,
{
    let chunk = chunk.max(1);
    let partials: Vec<R> = {
        #[cfg(feature = "parallel")]
        {
            if exec.is_parallel() {
                items.par_chunks(chunk).map(&f).collect()
            } else {
                items.chunks(chunk).map(&f).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = exec;
            items.chunks(chunk).map(&f).collect()
        }
    };
    partials.into_iter().fold(init, combine)
}

/// SplitMix64 finalizer, used to derive independent per-job seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_range(Execution::Sequential, 100, |i| i * i);
        let par = map_range(Execution::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);

        let data: Vec<u64> = (0..1000).collect();
        let sum = |e| map_chunks_reduce(e, &data, 7, |c| c.iter().sum::<u64>(), 0, |a, b| a + b);
        assert_eq!(sum(Execution::Sequential), sum(Execution::Parallel));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
    }
}
