//! Data-parallel map helpers.
//!
//! Every embarrassingly parallel loop in the crate goes through here so the
//! `parallel` feature can be switched off without touching call sites.
//! Results always come back in index order, so downstream reductions are
//! identical in both modes.

/// How a batch of independent jobs is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    /// Uses the rayon global pool; falls back to sequential when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Mode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Mode::Parallel
        } else {
            Mode::Sequential
        }
    }
}

/// Evaluates `f(0), …, f(n-1)` and returns the results in index order.
pub fn map_range<R, F>(mode: Mode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        Mode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Mode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        Mode::Parallel => (0..n).map(f).collect(),
    }
}

/// Pairwise (cascade) summation; order-independent of how the values were
/// produced and tighter than a running sum for long Monte-Carlo batches.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}
