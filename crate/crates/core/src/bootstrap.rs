//! Nonparametric bootstrap with per-resample random streams and a cap on
//! failed resamples.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{Diagnostics, EffectEstimate, Estimand, Scale};
use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;
use crate::numerics::{mean, sample_variance};

pub const DEFAULT_FAILURE_CAP: f64 = 0.05;

/// Outcome of a set of resamples or draws after dropping failures.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleSummary {
    pub values: Vec<f64>,
    pub attempted: usize,
    pub failed: usize,
}

impl ResampleSummary {
    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    pub fn variance(&self) -> f64 {
        sample_variance(&self.values)
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics { attempted: self.attempted, failed: self.failed, ..Diagnostics::default() }
    }

    /// Mean and variance of the retained values with a Wald interval.
    pub fn to_estimate(&self, estimand: Estimand, scale: Scale) -> EffectEstimate {
        EffectEstimate::wald(self.mean(), self.variance(), estimand, scale).with_diagnostics(self.diagnostics())
    }
}

/// Indices of a with-replacement resample of `n` rows.
pub fn resample_indices(n: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..n).map(|_| rng.index(n)).collect()
}

/// Evaluates replications `0..count` of a computation. Implementations may
/// run them in any order or concurrently but return results indexed by `k`.
pub trait Runner: Sync {
    fn run(&self, count: usize, f: &(dyn Fn(usize) -> Result<f64> + Sync)) -> Vec<Result<f64>>;
}

/// Runs replications one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runner for Sequential {
    fn run(&self, count: usize, f: &(dyn Fn(usize) -> Result<f64> + Sync)) -> Vec<Result<f64>> {
        (0..count).map(f).collect()
    }
}

/// Runs `count` replications of `f`, each on `rng.substream(k)`.
///
/// Resample-level failures (see [`Error::is_resample_failure`]) are dropped;
/// if more than `failure_cap` of them fail the whole computation fails.
/// Any other error aborts, the lowest-indexed one being reported.
pub fn replicate<F>(count: usize, rng: &RngStream, failure_cap: f64, f: F) -> Result<ResampleSummary>
where
    F: Fn(&mut RngStream) -> Result<f64> + Sync,
{
    replicate_on(&Sequential, count, rng, failure_cap, f)
}

pub fn replicate_on<F>(runner: &dyn Runner, count: usize, rng: &RngStream, failure_cap: f64, f: F) -> Result<ResampleSummary>
where
    F: Fn(&mut RngStream) -> Result<f64> + Sync,
{
    if count < 2 {
        return Err(Error::Config(format!("{count} resamples; at least 2 are needed for a variance")));
    }
    let results = runner.run(count, &|k| f(&mut rng.substream(k as u64)));
    let mut values = Vec::with_capacity(count);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => failed += 1,
            Err(e) if e.is_resample_failure() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    check_failures(failed, count, failure_cap)?;
    if values.len() < 2 {
        return Err(Error::EstimationFailed { failed, total: count });
    }
    Ok(ResampleSummary { values, attempted: count, failed })
}

pub fn check_failures(failed: usize, total: usize, cap: f64) -> Result<()> {
    if failed as f64 > cap * total as f64 {
        Err(Error::EstimationFailed { failed, total })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn fewer_than_two_resamples_is_config_error() {
        let r = replicate(1, &RngStream::new(0, 0), 0.05, |_| Ok(1.0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn failures_dropped_under_cap() {
        let k = AtomicUsize::new(0);
        let s = replicate(100, &RngStream::new(0, 0), 0.05, |_| {
            let k = k.fetch_add(1, Ordering::Relaxed) + 1;
            if k % 25 == 0 { Err(Error::Separation("x".into())) } else { Ok(k as f64) }
        })
        .unwrap();
        assert_eq!((s.attempted, s.failed, s.values.len()), (100, 4, 96));
    }

    #[test]
    fn failures_over_cap_abort() {
        let k = AtomicUsize::new(0);
        let r = replicate(100, &RngStream::new(0, 0), 0.05, |_| {
            let k = k.fetch_add(1, Ordering::Relaxed) + 1;
            if k % 10 == 0 { Err(Error::NoFeasibleWeights("x".into())) } else { Ok(0.0) }
        });
        assert_eq!(r, Err(Error::EstimationFailed { failed: 10, total: 100 }));
    }

    #[test]
    fn hard_errors_propagate() {
        let r = replicate(10, &RngStream::new(0, 0), 0.05, |_| Err(Error::Config("bad".into())));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn resample_streams_are_reproducible() {
        let run = || replicate(5, &RngStream::new(9, 2), 0.0, |r| Ok(r.uniform())).unwrap().values;
        assert_eq!(run(), run());
    }
}
