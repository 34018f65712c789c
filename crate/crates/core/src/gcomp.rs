//! Parametric G-computation: predict every target-population profile under
//! each treatment, average on the natural scale, contrast on the link scale.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;

use crate::bootstrap::{self, resample_indices, Runner, Sequential, DEFAULT_FAILURE_CAP};
use crate::coxph::{fit_cox, marginal_log_hr};
use crate::data::{Diagnostics, EffectEstimate, Estimand, IpdDataset, Scale};
use crate::error::{Error, Result};
use crate::glm::{fit_glm, GlmFit, Link, ModelSpec};
use crate::mcmc::{sample_glm_posterior, McmcConfig, PriorSpec};
use crate::numerics::dist::{bernoulli, mvn_sample};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::RngStream;
use crate::numerics::{expit, logit, mean, percentile_interval, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterfactualMeans {
    /// Average prediction with everyone on the active treatment.
    pub mu1: f64,
    /// Average prediction with everyone on the control.
    pub mu0: f64,
}

pub fn scale_of(link: Link) -> Scale {
    match link {
        Link::Logit => Scale::LogOr,
        Link::Log => Scale::LogRr,
        Link::Identity => Scale::MeanDifference,
    }
}

/// `g(mu1) - g(mu0)`.
pub fn contrast(link: Link, m: CounterfactualMeans) -> Result<f64> {
    match link {
        Link::Logit => {
            for mu in [m.mu1, m.mu0] {
                if !(mu > 0.0 && mu < 1.0) {
                    return Err(Error::DegenerateMean(mu));
                }
            }
            Ok(logit(m.mu1) - logit(m.mu0))
        }
        Link::Log => {
            for mu in [m.mu1, m.mu0] {
                if !(mu > 0.0) {
                    return Err(Error::DegenerateMean(mu));
                }
            }
            Ok(m.mu1.ln() - m.mu0.ln())
        }
        Link::Identity => Ok(m.mu1 - m.mu0),
    }
}

pub fn gcomp_point(fit: &GlmFit, spec: &ModelSpec, x_star: &Matrix) -> Result<(CounterfactualMeans, f64)> {
    gcomp_point_with(&fit.coefficients, spec, x_star)
}

/// Marginal contrast for coefficient vector `beta` over the rows of `x_star`.
pub fn gcomp_point_with(beta: &[f64], spec: &ModelSpec, x_star: &Matrix) -> Result<(CounterfactualMeans, f64)> {
    spec.validate(x_star.cols())?;
    if !spec.treatment {
        return Err(Error::Config("outcome model has no treatment term".into()));
    }
    if beta.len() != spec.width() {
        return Err(Error::Shape(format!("{} coefficients for a design of width {}", beta.len(), spec.width())));
    }
    let n = x_star.rows();
    if n == 0 {
        return Err(Error::Shape("empty target population".into()));
    }
    let mut p1 = Vec::with_capacity(n);
    let mut p0 = Vec::with_capacity(n);
    for r in x_star.row_iter() {
        p1.push(spec.link.inverse(spec.linear_predictor(beta, r, 1.0)));
        p0.push(spec.link.inverse(spec.linear_predictor(beta, r, 0.0)));
    }
    let m = CounterfactualMeans { mu1: order_free_sum(p1) / n as f64, mu0: order_free_sum(p0) / n as f64 };
    Ok((m, contrast(spec.link, m)?))
}

/// Sum that does not depend on the order of the terms.
fn order_free_sum(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum()
}

#[derive(Debug, Clone, Copy)]
pub struct GcompConfig {
    pub boot: usize,
    pub failure_cap: f64,
}

impl Default for GcompConfig {
    fn default() -> Self {
        GcompConfig { boot: 1000, failure_cap: DEFAULT_FAILURE_CAP }
    }
}

/// Maximum-likelihood G-computation with bootstrap variance. The point
/// estimate is the bootstrap mean; `x_star` is held fixed across resamples.
pub fn gcomp_ml(
    ipd: &IpdDataset,
    spec: &ModelSpec,
    x_star: &Matrix,
    cfg: &GcompConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    gcomp_ml_on(&Sequential, ipd, spec, x_star, cfg, rng)
}

pub fn gcomp_ml_on(
    runner: &dyn Runner,
    ipd: &IpdDataset,
    spec: &ModelSpec,
    x_star: &Matrix,
    cfg: &GcompConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    spec.validate(ipd.k())?;
    spec.validate(x_star.cols())?;
    let summary = bootstrap::replicate_on(runner, cfg.boot, rng, cfg.failure_cap, |r| {
        let idx = resample_indices(ipd.n(), r);
        let fit = fit_glm(spec, &ipd.select_rows(&idx), None)?;
        gcomp_point(&fit, spec, x_star).map(|(_, d)| d)
    })?;
    Ok(summary.to_estimate(Estimand::Marginal, scale_of(spec.link)))
}

/// Parameter-simulation variant: coefficients drawn from the asymptotic
/// normal distribution of the maximum-likelihood fit.
pub fn gcomp_paramsim(
    fit: &GlmFit,
    spec: &ModelSpec,
    x_star: &Matrix,
    n_draws: usize,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    if n_draws < 2 {
        return Err(Error::Config(format!("{n_draws} parameter draws; at least 2 are needed")));
    }
    let mut r = rng.substream(0);
    let betas = mvn_sample(&fit.coefficients, &fit.vcov, n_draws, &mut r)?;
    let mut deltas = Vec::with_capacity(n_draws);
    let mut failed = 0;
    for b in betas.row_iter() {
        match gcomp_point_with(b, spec, x_star) {
            Ok((_, d)) => deltas.push(d),
            Err(e) if e.is_resample_failure() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    bootstrap::check_failures(failed, n_draws, DEFAULT_FAILURE_CAP)?;
    Ok(draw_summary(&deltas, n_draws, failed, scale_of(spec.link)))
}

fn draw_summary(deltas: &[f64], attempted: usize, failed: usize, scale: Scale) -> EffectEstimate {
    EffectEstimate {
        point: mean(deltas),
        variance: sample_variance(deltas),
        ci: percentile_interval(deltas),
        estimand: Estimand::Marginal,
        scale,
        diagnostics: Diagnostics { attempted, failed, ..Diagnostics::default() },
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BayesConfig {
    pub mcmc: McmcConfig,
    pub prior: PriorSpec,
    /// Largest tolerated fraction of draws with a degenerate arm.
    pub drop_cap: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig { mcmc: McmcConfig::default(), prior: PriorSpec::default(), drop_cap: 0.01 }
    }
}

/// Marginal log odds ratio of one posterior draw, from Bernoulli outcomes
/// imputed for every profile under each treatment.
pub fn imputed_contrast(beta: &[f64], spec: &ModelSpec, x_star: &Matrix, rng: &mut RngStream) -> Result<f64> {
    let n = x_star.rows() as f64;
    let (mut e1, mut e0) = (0u32, 0u32);
    for r in x_star.row_iter() {
        e1 += bernoulli(rng, expit(spec.linear_predictor(beta, r, 1.0))) as u32;
        e0 += bernoulli(rng, expit(spec.linear_predictor(beta, r, 0.0))) as u32;
    }
    contrast(Link::Logit, CounterfactualMeans { mu1: e1 as f64 / n, mu0: e0 as f64 / n })
}

/// Bayesian G-computation through the posterior predictive distribution.
pub fn gcomp_bayes(
    ipd: &IpdDataset,
    spec: &ModelSpec,
    x_star: &Matrix,
    cfg: &BayesConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    if spec.link != Link::Logit {
        return Err(Error::Config("Bayesian G-computation supports the logit link only".into()));
    }
    spec.validate(x_star.cols())?;
    if x_star.rows() == 0 {
        return Err(Error::Shape("empty target population".into()));
    }
    let post = sample_glm_posterior(spec, ipd, &cfg.prior, &cfg.mcmc, &rng.substream(0))?;
    let mut r = rng.substream(1);
    let mut deltas = Vec::with_capacity(post.len());
    let mut dropped = 0;
    for beta in post.draws.row_iter() {
        match imputed_contrast(beta, spec, x_star, &mut r) {
            Ok(d) => deltas.push(d),
            Err(Error::DegenerateMean(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    bootstrap::check_failures(dropped, post.len(), cfg.drop_cap)?;
    let mut est = draw_summary(&deltas, post.len(), dropped, Scale::LogOr);
    est.diagnostics.max_rhat = Some(post.max_rhat());
    if !cfg.mcmc.strict_rhat && post.max_rhat() > cfg.mcmc.rhat_threshold {
        est.diagnostics.warnings.push(format!("max R-hat {:.3} exceeds {}", post.max_rhat(), cfg.mcmc.rhat_threshold));
    }
    Ok(est)
}

/// Marginal log hazard ratio at time `t` from a Cox outcome model, with
/// bootstrap mean and variance.
pub fn gcomp_cox(
    ipd: &IpdDataset,
    spec: &ModelSpec,
    x_star: &Matrix,
    t: f64,
    cfg: &GcompConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    gcomp_cox_on(&Sequential, ipd, spec, x_star, t, cfg, rng)
}

pub fn gcomp_cox_on(
    runner: &dyn Runner,
    ipd: &IpdDataset,
    spec: &ModelSpec,
    x_star: &Matrix,
    t: f64,
    cfg: &GcompConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    let full = fit_cox(ipd, spec)?;
    marginal_log_hr(&full, spec, x_star, t)?;
    let summary = bootstrap::replicate_on(runner, cfg.boot, rng, cfg.failure_cap, |r| {
        let idx = resample_indices(ipd.n(), r);
        let fit = fit_cox(&ipd.select_rows(&idx), spec)?;
        marginal_log_hr(&fit, spec, x_star, t)
    })?;
    Ok(summary.to_estimate(Estimand::Marginal, Scale::LogHr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dist::standard_normal;
    use alloc::vec;

    fn one_covariate() -> ModelSpec {
        ModelSpec::outcome_model(1, &[])
    }

    #[test]
    fn no_treatment_effect_gives_zero() {
        let spec = ModelSpec::outcome_model(2, &[0]);
        let x = Matrix::from_rows(&[[0.1, 2.0], [-1.0, 0.3], [0.7, -0.2]]).unwrap();
        let (_, d) = gcomp_point_with(&[0.3, 1.0, -0.5, 0.0, 0.0], &spec, &x).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn without_covariates_marginal_is_conditional() {
        let spec = ModelSpec::treatment_only();
        let (m, d) = gcomp_point_with(&[0.0, 1.0], &spec, &Matrix::zeros(5, 0)).unwrap();
        assert!((m.mu1 - expit(1.0)).abs() < 1e-15 && (m.mu0 - 0.5).abs() < 1e-15);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn averaging_order_matters() {
        let spec = one_covariate();
        let beta = [0.0, 3.0, 2.0];
        let x = Matrix::from_rows(&[[-1.0], [0.0], [1.5]]).unwrap();
        let (_, d) = gcomp_point_with(&beta, &spec, &x).unwrap();
        // shortcut: transform the average linear predictor
        let xbar = (-1.0 + 0.0 + 1.5) / 3.0;
        let shortcut = (3.0 * xbar + 2.0) - 3.0 * xbar;
        assert!((d - shortcut).abs() > 0.1);
    }

    #[test]
    fn permutation_invariant() {
        let spec = ModelSpec::outcome_model(2, &[1]);
        let beta = [0.2, 0.5, -1.0, 0.7, 0.4];
        let x = Matrix::from_rows(&[[0.1, 2.0], [-1.0, 0.3], [0.7, -0.2], [0.0, 1.0]]).unwrap();
        let y = x.select_rows(&[2, 0, 3, 1]);
        let a = gcomp_point_with(&beta, &spec, &x).unwrap().1;
        let b = gcomp_point_with(&beta, &spec, &y).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn identity_link_collapses() {
        let spec = ModelSpec::outcome_model(1, &[]).with_link(Link::Identity);
        let x = Matrix::from_rows(&[[0.3], [2.0], [-4.0]]).unwrap();
        let (_, d) = gcomp_point_with(&[0.1, 0.05, 0.2], &spec, &x).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_mean_detected() {
        let spec = ModelSpec::treatment_only();
        let r = gcomp_point_with(&[-800.0, 1.0], &spec, &Matrix::zeros(3, 0));
        assert!(matches!(r, Err(Error::DegenerateMean(_))));
    }

    fn simulated(n: usize, seed: u64) -> IpdDataset {
        let mut rng = RngStream::new(seed, 0);
        let x = Matrix::from_fn(n, 1, |_, _| standard_normal(&mut rng));
        let trt: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = (0..n).map(|i| bernoulli(&mut rng, expit(-0.3 + 0.8 * x[(i, 0)] + 0.5 * trt[i] as f64))).collect();
        IpdDataset::binary(x, trt, y).unwrap()
    }

    #[test]
    fn bootstrap_config_and_determinism() {
        let d = simulated(300, 1);
        let spec = one_covariate();
        let x_star = Matrix::from_fn(200, 1, |i, _| i as f64 / 100.0 - 1.0);
        let cfg = GcompConfig { boot: 1, ..GcompConfig::default() };
        assert!(matches!(gcomp_ml(&d, &spec, &x_star, &cfg, &RngStream::new(0, 0)), Err(Error::Config(_))));
        let cfg = GcompConfig { boot: 50, ..GcompConfig::default() };
        let a = gcomp_ml(&d, &spec, &x_star, &cfg, &RngStream::new(9, 0)).unwrap();
        let b = gcomp_ml(&d, &spec, &x_star, &cfg, &RngStream::new(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paramsim_degenerate_covariance() {
        let spec = one_covariate();
        let fit = GlmFit {
            coefficients: vec![-0.2, 0.8, 0.6],
            vcov: Matrix::identity(3).scale(1e-12),
            deviance: 0.0,
            converged: true,
            iterations: 1,
            n: 1,
        };
        let x_star = Matrix::from_fn(100, 1, |i, _| (i as f64).cos());
        let est = gcomp_paramsim(&fit, &spec, &x_star, 200, &RngStream::new(0, 0)).unwrap();
        let exact = gcomp_point(&fit, &spec, &x_star).unwrap().1;
        assert!((est.point - exact).abs() < 1e-5);
        assert!(est.variance < 1e-10);
    }

    #[test]
    fn single_profile_bernoulli_recovery() {
        let spec = ModelSpec::treatment_only();
        let x = Matrix::zeros(1, 0);
        let mut r = RngStream::new(2, 0);
        let beta = [0.4, -0.9];
        let draws = 20_000;
        let mut e1 = 0.0;
        for _ in 0..draws {
            e1 += bernoulli(&mut r, expit(spec.linear_predictor(&beta, x.row(0), 1.0))) as u8 as f64;
        }
        let p = expit(-0.5);
        assert!((e1 / draws as f64 - p).abs() < 3.0 * (p * (1.0 - p) / draws as f64).sqrt());
    }
}
