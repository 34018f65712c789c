//! Matching-adjusted indirect comparison with method-of-moments weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;

use crate::bootstrap::{self, resample_indices, Runner, Sequential, DEFAULT_FAILURE_CAP};
use crate::data::{AggregateData, EffectEstimate, Estimand, IpdDataset, Scale};
use crate::error::{Error, Result};
use crate::glm::{fit_glm, ModelSpec};
use crate::numerics::matrix::{dot, Matrix};
use crate::numerics::optim::bfgs_minimize;
use crate::numerics::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub alpha: Vec<f64>,
    /// Unnormalized weights `exp(x_centered * alpha)`.
    pub weights: Vec<f64>,
    pub ess: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct WeightOptions {
    /// Gradient-norm tolerance of the optimizer.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest admissible deviation of a weighted mean from its target.
    pub balance_tol: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        WeightOptions { tol: 1e-8, max_iter: 500, balance_tol: 1e-6 }
    }
}

/// `Q(alpha) = sum_i exp(x_i alpha)` over centered covariates.
pub fn moment_objective(x_centered: &Matrix, alpha: &[f64]) -> f64 {
    x_centered.row_iter().map(|r| dot(r, alpha).exp()).sum()
}

fn log_sum_exp(x: &Matrix, alpha: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(x.row_iter().map(|r| dot(r, alpha)));
    let m = scratch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + scratch.iter().map(|&e| (e - m).exp()).sum::<f64>().ln()
}

pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

pub fn estimate_weights(x_em: &Matrix, theta_em: &[f64]) -> Result<WeightFit> {
    estimate_weights_with(x_em, theta_em, WeightOptions::default())
}

/// Solves the moment conditions by minimizing `ln Q`, which shares its
/// minimizer with `Q` and whose gradient is the weighted-mean imbalance.
pub fn estimate_weights_with(x_em: &Matrix, theta_em: &[f64], opts: WeightOptions) -> Result<WeightFit> {
    let (n, k) = (x_em.rows(), x_em.cols());
    if k == 0 {
        return Err(Error::Config("no effect modifiers to balance".into()));
    }
    if theta_em.len() != k {
        return Err(Error::Shape(format!("{} targets for {k} effect modifiers", theta_em.len())));
    }
    if n == 0 {
        return Err(Error::NoFeasibleWeights("no subjects".into()));
    }
    let xc = Matrix::from_fn(n, k, |i, j| x_em[(i, j)] - theta_em[j]);
    for j in 0..k {
        let col = xc.col(j);
        if col.iter().all(|&v| v > 0.0) || col.iter().all(|&v| v < 0.0) {
            return Err(Error::NoFeasibleWeights(format!("target of effect modifier {j} outside the observed range")));
        }
    }

    let objective = |a: &[f64]| log_sum_exp(&xc, a, &mut Vec::with_capacity(n));
    let gradient = |a: &[f64]| {
        let eta: Vec<f64> = xc.row_iter().map(|r| dot(r, a)).collect();
        let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut g = vec![0.0; k];
        let mut total = 0.0;
        for (r, e) in xc.row_iter().zip(&eta) {
            let p = (e - m).exp();
            total += p;
            for (gj, xj) in g.iter_mut().zip(r) {
                *gj += p * xj;
            }
        }
        g.iter_mut().for_each(|v| *v /= total);
        g
    };
    let res = bfgs_minimize(objective, gradient, &vec![0.0; k], opts.tol, opts.max_iter)
        .map_err(|e| Error::NoFeasibleWeights(format!("{e}")))?;
    if !res.converged {
        return Err(Error::NoFeasibleWeights(format!(
            "optimizer stopped after {} iterations with gradient norm {:.2e}",
            res.iterations, res.grad_norm
        )));
    }
    let alpha = res.argmin;
    let weights: Vec<f64> = xc.row_iter().map(|r| dot(r, &alpha).exp()).collect();
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || !(total > 0.0) {
        return Err(Error::NoFeasibleWeights("weights overflow".into()));
    }
    for j in 0..k {
        let wm = weights.iter().zip(x_em.row_iter()).map(|(w, r)| w * r[j]).sum::<f64>() / total;
        if (wm - theta_em[j]).abs() > opts.balance_tol {
            return Err(Error::NoFeasibleWeights(format!("effect modifier {j} unbalanced by {:.2e}", wm - theta_em[j])));
        }
    }
    let ess = effective_sample_size(&weights);
    Ok(WeightFit { alpha, weights, ess })
}

#[derive(Debug, Clone, Copy)]
pub struct MaicConfig {
    pub boot: usize,
    pub weights: WeightOptions,
    pub failure_cap: f64,
}

impl Default for MaicConfig {
    fn default() -> Self {
        MaicConfig { boot: 1000, weights: WeightOptions::default(), failure_cap: DEFAULT_FAILURE_CAP }
    }
}

/// Weighted `y ~ z` log odds ratio of one (re)sample.
fn weighted_effect(ipd: &IpdDataset, ems: &[usize], theta: &[f64], opts: WeightOptions) -> Result<(f64, f64)> {
    let wf = estimate_weights_with(&ipd.x.select_cols(ems), theta, opts)?;
    let spec = ModelSpec::treatment_only();
    let fit = fit_glm(&spec, ipd, Some(&wf.weights))?;
    Ok((fit.coefficients[1], wf.ess))
}

/// Marginal A vs C log odds ratio in the aggregate trial's population.
///
/// The point estimate is the mean over bootstrap resamples and the variance
/// their sample variance. Only the effect modifiers enter the weights.
pub fn maic_estimate(ipd: &IpdDataset, ald: &AggregateData, cfg: &MaicConfig, rng: &RngStream) -> Result<EffectEstimate> {
    maic_estimate_on(&Sequential, ipd, ald, cfg, rng)
}

pub fn maic_estimate_on(
    runner: &dyn Runner,
    ipd: &IpdDataset,
    ald: &AggregateData,
    cfg: &MaicConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    ald.check_against(ipd)?;
    ipd.binary_outcome()?;
    if cfg.boot < 2 {
        return Err(Error::Config(format!("{} bootstrap resamples; at least 2 are needed", cfg.boot)));
    }
    let ems = &ald.effect_modifiers;
    let theta = ald.em_means();
    let full = estimate_weights_with(&ipd.x.select_cols(ems), &theta, cfg.weights)?;

    let summary = bootstrap::replicate_on(runner, cfg.boot, rng, cfg.failure_cap, |r| {
        let idx = resample_indices(ipd.n(), r);
        weighted_effect(&ipd.select_rows(&idx), ems, &theta, cfg.weights).map(|(d, _)| d)
    })?;
    let mut est = summary.to_estimate(Estimand::Marginal, Scale::LogOr);
    est.diagnostics.ess = Some(full.ess);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ArmCounts;
    use crate::numerics::{dist, expit};

    fn binary_column(n: usize) -> Matrix {
        Matrix::from_fn(n, 1, |i, _| (i % 2) as f64)
    }

    #[test]
    fn already_balanced_gives_unit_weights() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -2.0], [2.0, 0.0]]).unwrap();
        let fit = estimate_weights(&x, &[2.0, 0.0]).unwrap();
        assert!(fit.alpha.iter().all(|a| a.abs() < 1e-10));
        assert!(fit.weights.iter().all(|w| (w - 1.0).abs() < 1e-9));
        assert!((fit.ess - 3.0).abs() < 1e-9);
    }

    #[test]
    fn binary_modifier_closed_form() {
        let n = 200;
        let fit = estimate_weights(&binary_column(n), &[0.75]).unwrap();
        assert!((fit.alpha[0] - 3f64.ln()).abs() < 1e-6);
        let ratio = fit.weights[1] / fit.weights[0];
        assert!((ratio - 3.0).abs() < 1e-6);
        // half the sample at relative weight 1, half at 3
        let ess = (n as f64 / 2.0 * 4.0).powi(2) / (n as f64 / 2.0 * 10.0);
        assert!((fit.ess - ess).abs() < 1e-6);
        assert!((fit.ess - 0.8 * n as f64).abs() < 1e-6);
    }

    #[test]
    fn target_outside_range_is_infeasible() {
        let x = Matrix::from_fn(20, 1, |i, _| i as f64 / 20.0);
        assert!(matches!(estimate_weights(&x, &[1.5]), Err(Error::NoFeasibleWeights(_))));
    }

    #[test]
    fn objective_matches_definition() {
        let x = Matrix::from_rows(&[[0.5], [-0.25]]).unwrap();
        let q = moment_objective(&x, &[2.0]);
        assert!((q - (1f64.exp() + (-0.5f64).exp())).abs() < 1e-15);
    }

    fn balanced_null(n: usize, seed: u64) -> (IpdDataset, AggregateData) {
        let mut rng = RngStream::new(seed, 0);
        let x = Matrix::from_fn(n, 2, |_, _| dist::standard_normal(&mut rng));
        let trt: Vec<u8> = (0..n).map(|i| (i % 3 != 0) as u8).collect();
        let y = (0..n).map(|i| dist::bernoulli(&mut rng, expit(-0.5 + 0.5 * x[(i, 0)]))).collect();
        let ipd = IpdDataset::binary(x, trt, y).unwrap();
        let means = (0..2).map(|j| crate::numerics::mean(&ipd.x.col(j))).collect();
        let ald = AggregateData {
            names: ipd.names.clone(),
            means,
            sds: vec![1.0, 1.0],
            effect_modifiers: vec![0, 1],
            counts: ArmCounts { y_b: 10, n_b: 20, y_c: 10, n_c: 20 },
        };
        (ipd, ald)
    }

    #[test]
    fn null_effect_recovered() {
        let (ipd, ald) = balanced_null(3000, 1);
        let cfg = MaicConfig { boot: 200, ..MaicConfig::default() };
        let est = maic_estimate(&ipd, &ald, &cfg, &RngStream::new(2, 0)).unwrap();
        assert!(est.point.abs() < 3.0 * est.se(), "{est:?}");
        assert_eq!(est.estimand, Estimand::Marginal);
        assert!(est.diagnostics.ess.unwrap() > 2999.0);
    }

    #[test]
    fn two_resamples_are_reproducible() {
        let (ipd, ald) = balanced_null(300, 3);
        let cfg = MaicConfig { boot: 2, ..MaicConfig::default() };
        let a = maic_estimate(&ipd, &ald, &cfg, &RngStream::new(4, 0)).unwrap();
        let b = maic_estimate(&ipd, &ald, &cfg, &RngStream::new(4, 0)).unwrap();
        assert_eq!(a, b);
        let cfg = MaicConfig { boot: 1, ..cfg };
        assert!(matches!(maic_estimate(&ipd, &ald, &cfg, &RngStream::new(4, 0)), Err(Error::Config(_))));
    }
}
