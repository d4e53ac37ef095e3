//! Data-parallel helpers. With the `parallel` feature these fan out over the
//! rayon pool; without it they fall back to the sequential implementations,
//! which are always compiled (and benchmarked against the parallel path).
//!
//! Only element-wise maps are parallelized, so results are bit-identical
//! across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluate `f` at `0..n` and collect, in index order.
pub fn map_f64<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_f64_seq(n, f)
    }
}

/// Sequential fallback for [`map_f64`].
pub fn map_f64_seq<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64,
{
    (0..n).map(f).collect()
}

/// Map an arbitrary item producer over `0..n`.
pub fn map_items<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sin() * 1e-3 + (i as f64).sqrt();
        let a = map_f64(1000, f);
        let b = map_f64_seq(1000, f);
        assert_eq!(a, b);
    }
}
