//! Data-parallel helpers with a sequential fallback.
//!
//! Everything funnels through `map_indices`: with the `parallel` feature
//! (default) the closure runs on the rayon pool, otherwise on the current
//! thread. Results are collected in index order either way, so outputs are
//! bit-identical across both modes and across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indices_seq(n, f)
    }
}

/// Sequential reference version of [`map_indices`]; always available so
/// benchmarks can compare both paths within one build.
pub fn map_indices_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Whether this build routes `map_indices` through rayon.
pub const PARALLEL: bool = cfg!(feature = "parallel");

/// Configure the global thread pool (no-op without the `parallel` feature).
/// Returns false if the pool was already initialized.
pub fn set_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let a = map_indices(257, |i| (i as f64).sin());
        let b = map_indices_seq(257, |i| (i as f64).sin());
        assert_eq!(a, b);
    }
}
