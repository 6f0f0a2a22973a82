//! Data-parallel batch evaluation with a sequential fallback.
//!
//! Batches are always split into fixed-size chunks and chunk results are
//! combined in chunk order, so both execution modes produce bit-identical
//! floating-point results.

use std::ops::Range;

/// Number of samples evaluated by one task.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// behaves exactly like `Sequential`.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect()
}

/// Evaluates `f` on every chunk of `0..n`, each writing into its own zeroed
/// accumulator of length `len`, then sums the accumulators in chunk order.
pub fn chunked_sum<F>(exec: Exec, n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync,
{
    let ranges = chunk_ranges(n);
    let run = |r: &Range<usize>| {
        let mut acc = vec![0.0; len];
        f(r.clone(), &mut acc);
        acc
    };
    let partials: Vec<Vec<f64>> = match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            ranges.par_iter().map(run).collect()
        }
        _ => ranges.iter().map(run).collect(),
    };
    let mut total = vec![0.0; len];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Order-preserving map over `0..n`.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().with_min_len(CHUNK).map(&f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}
