//! Multiple imputation marginalization: synthesize outcome datasets for the
//! target population from the posterior predictive, fit an unadjusted
//! regression to each, then pool.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::bootstrap::check_failures;
use crate::data::{Diagnostics, EffectEstimate, Estimand, IpdDataset, Scale, Z_975};
use crate::error::{Error, Result};
use crate::glm::{fit_design, Link, ModelSpec};
use crate::mcmc::{sample_glm_posterior, McmcConfig, PriorSpec};
use crate::numerics::dist::{bernoulli, chi_squared_sample, standard_normal, student_t_sample, t_quantile};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::RngStream;
use crate::numerics::{expit, mean, percentile_interval, sample_variance};

/// `M` synthetic outcome vectors for fixed profiles and treatment assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSet {
    pub x_star: Matrix,
    pub z_star: Vec<u8>,
    pub outcomes: Vec<Vec<u8>>,
}

/// `round(n * alloc)` active assignments followed by controls.
pub fn allocate(n: usize, alloc: f64) -> Result<Vec<u8>> {
    if !(alloc > 0.0 && alloc < 1.0) {
        return Err(Error::Config(format!("allocation ratio {alloc} outside (0, 1)")));
    }
    let active = (n as f64 * alloc).round() as usize;
    Ok((0..n).map(|i| (i < active) as u8).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisConfig {
    pub m: usize,
    /// Fraction of the synthetic population on the active treatment.
    pub alloc: f64,
    pub mcmc: McmcConfig,
    pub prior: PriorSpec,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { m: 1000, alloc: 2.0 / 3.0, mcmc: McmcConfig::default(), prior: PriorSpec::default() }
    }
}

/// Draws `M` outcome vectors, the `m`-th from the posterior predictive at
/// an evenly spaced posterior draw.
pub fn mim_synthesize(
    ipd: &IpdDataset,
    spec: &ModelSpec,
    x_star: &Matrix,
    cfg: &SynthesisConfig,
    rng: &RngStream,
) -> Result<SynthesisSet> {
    if cfg.m < 2 {
        return Err(Error::Config(format!("M = {}; at least 2 syntheses are needed", cfg.m)));
    }
    spec.validate(x_star.cols())?;
    let post = sample_glm_posterior(spec, ipd, &cfg.prior, &cfg.mcmc, &rng.substream(0))?;
    let l = post.len();
    if l < cfg.m || l % cfg.m != 0 {
        return Err(Error::Config(format!("M = {} does not divide the {l} retained draws", cfg.m)));
    }
    let stride = l / cfg.m;
    let z_star = allocate(x_star.rows(), cfg.alloc)?;
    let mut r = rng.substream(1);
    let outcomes = (0..cfg.m)
        .map(|m| {
            let beta = post.draws.row(m * stride + stride - 1);
            x_star
                .row_iter()
                .zip(&z_star)
                .map(|(row, &z)| bernoulli(&mut r, expit(spec.linear_predictor(beta, row, z as f64))))
                .collect()
        })
        .collect();
    Ok(SynthesisSet { x_star: x_star.clone(), z_star, outcomes })
}

/// Treatment coefficient and its variance from `y*(m) ~ z*`.
pub fn analyze_synthesis(set: &SynthesisSet, m: usize) -> Result<(f64, f64)> {
    let y = &set.outcomes[m];
    if y.len() != set.z_star.len() {
        return Err(Error::Shape(format!("synthesis {m} has {} outcomes for {} subjects", y.len(), set.z_star.len())));
    }
    for arm in [0u8, 1] {
        let mut seen = [false; 2];
        for (&yi, &z) in y.iter().zip(&set.z_star) {
            if z == arm {
                seen[yi as usize] = true;
            }
        }
        if !(seen[0] && seen[1]) {
            return Err(Error::SynthesisDegenerate(m));
        }
    }
    let design = Matrix::from_fn(y.len(), 2, |i, j| if j == 0 { 1.0 } else { set.z_star[i] as f64 });
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let fit = fit_design(&design, &yf, None, Link::Logit)?;
    Ok((fit.coefficients[1], fit.vcov[(1, 1)]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondStage {
    pub estimates: Vec<(f64, f64)>,
    /// Indices of syntheses dropped for a single-valued arm.
    pub degenerate: Vec<usize>,
}

/// Second-stage fits of every synthesis. Up to `drop_cap` of them may be
/// degenerate and are dropped.
pub fn mim_analyze(set: &SynthesisSet, drop_cap: f64) -> Result<SecondStage> {
    let mut estimates = Vec::with_capacity(set.outcomes.len());
    let mut degenerate = Vec::new();
    for m in 0..set.outcomes.len() {
        match analyze_synthesis(set, m) {
            Ok(e) => estimates.push(e),
            Err(Error::SynthesisDegenerate(k)) => degenerate.push(k),
            Err(e) => return Err(e),
        }
    }
    check_failures(degenerate.len(), set.outcomes.len(), drop_cap)?;
    Ok(SecondStage { estimates, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMethod {
    Rules,
    PosteriorSimulation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEstimate {
    pub m: usize,
    pub delta_bar: f64,
    /// Mean within-synthesis variance.
    pub v_bar: f64,
    /// Between-synthesis variance.
    pub b: f64,
    pub point: f64,
    pub variance: f64,
    pub ci: (f64, f64),
    pub method: PoolingMethod,
}

impl PooledEstimate {
    pub fn to_estimate(&self, degenerate: usize) -> EffectEstimate {
        EffectEstimate {
            point: self.point,
            variance: self.variance,
            ci: self.ci,
            estimand: Estimand::Marginal,
            scale: Scale::LogOr,
            diagnostics: Diagnostics { attempted: self.m + degenerate, failed: degenerate, ..Diagnostics::default() },
        }
    }

    /// Degrees of freedom `(M - 1)(1 + v_bar / ((1 + 1/M) b))^2` of the
    /// heavier-tailed interval.
    pub fn t_dof(&self) -> f64 {
        let m = self.m as f64;
        (m - 1.0) * (1.0 + self.v_bar / ((1.0 + 1.0 / m) * self.b)).powi(2)
    }

    /// 95% interval `point +/- t_{dof, 0.975} * sqrt(variance)`.
    pub fn t_interval(&self) -> Result<(f64, f64)> {
        let q = t_quantile(0.975, self.t_dof())?;
        let half = q * self.variance.sqrt();
        Ok((self.point - half, self.point + half))
    }
}

fn moments(estimates: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if estimates.len() < 2 {
        return Err(Error::Config(format!("{} syntheses; at least 2 are needed", estimates.len())));
    }
    let deltas: Vec<f64> = estimates.iter().map(|e| e.0).collect();
    let v_bar = estimates.iter().map(|e| e.1).sum::<f64>() / estimates.len() as f64;
    Ok((mean(&deltas), v_bar, sample_variance(&deltas)))
}

/// Plug-in combining rules: the mean of the syntheses' estimates and
/// variance `(1 + 1/M) b - v_bar`, with a Wald interval.
pub fn mim_pool_rules(estimates: &[(f64, f64)]) -> Result<PooledEstimate> {
    let (delta_bar, v_bar, b) = moments(estimates)?;
    let m = estimates.len();
    let variance = (1.0 + 1.0 / m as f64) * b - v_bar;
    if !(variance > 0.0) {
        return Err(Error::NegativeVariance { m, b, v_bar });
    }
    let half = Z_975 * variance.sqrt();
    Ok(PooledEstimate {
        m,
        delta_bar,
        v_bar,
        b,
        point: delta_bar,
        variance,
        ci: (delta_bar - half, delta_bar + half),
        method: PoolingMethod::Rules,
    })
}

pub const MAX_POOLING_RETRIES: usize = 1000;

/// Draws of the pooled effect by posterior simulation, with their summary.
///
/// For each draw: `mu ~ N(delta_bar, v_bar / M)`, `sigma2 = (M - 1) b / chi2_{M-1} - v_bar`
/// (redrawn while negative, at most [`MAX_POOLING_RETRIES`] times) and
/// `Delta = mu + sqrt((1 + 1/M) sigma2) * t_{M-1}`.
pub fn mim_pool_posterior(estimates: &[(f64, f64)], draws: usize, rng: &RngStream) -> Result<(Vec<f64>, PooledEstimate)> {
    let (delta_bar, v_bar, b) = moments(estimates)?;
    let m = estimates.len();
    if draws < 2 {
        return Err(Error::Config(format!("{draws} pooling draws; at least 2 are needed")));
    }
    let mf = m as f64;
    let nu = mf - 1.0;
    let mut r = rng.substream(0);
    let mut out = Vec::with_capacity(draws);
    let (mut tries, mut rejected) = (0usize, 0usize);
    for _ in 0..draws {
        let mu = delta_bar + (v_bar / mf).sqrt() * standard_normal(&mut r);
        let mut sigma2 = f64::NAN;
        for _ in 0..MAX_POOLING_RETRIES {
            tries += 1;
            let s = nu * b / chi_squared_sample(&mut r, nu)? - v_bar;
            if s > 0.0 {
                sigma2 = s;
                break;
            }
            rejected += 1;
        }
        if !(sigma2 > 0.0) {
            return Err(Error::PoolingUnstable(rejected as f64 / tries as f64));
        }
        out.push(mu + ((1.0 + 1.0 / mf) * sigma2).sqrt() * student_t_sample(&mut r, nu)?);
    }
    let rate = rejected as f64 / tries as f64;
    if rate > 0.5 {
        return Err(Error::PoolingUnstable(rate));
    }
    let pooled = PooledEstimate {
        m,
        delta_bar,
        v_bar,
        b,
        point: mean(&out),
        variance: sample_variance(&out),
        ci: percentile_interval(&out),
        method: PoolingMethod::PosteriorSimulation,
    };
    Ok((out, pooled))
}

#[derive(Debug, Clone, Copy)]
pub struct MimConfig {
    pub synthesis: SynthesisConfig,
    pub pooling: PoolingMethod,
    /// Posterior-simulation draws.
    pub pooling_draws: usize,
    pub drop_cap: f64,
    /// Rules pooling only: report the t interval instead of the normal one.
    pub t_interval: bool,
}

impl Default for MimConfig {
    fn default() -> Self {
        MimConfig {
            synthesis: SynthesisConfig::default(),
            pooling: PoolingMethod::Rules,
            pooling_draws: 100_000,
            drop_cap: 0.01,
            t_interval: false,
        }
    }
}

/// Synthesis, second-stage analysis and pooling in one call.
pub fn mim_estimate(
    ipd: &IpdDataset,
    spec: &ModelSpec,
    x_star: &Matrix,
    cfg: &MimConfig,
    rng: &RngStream,
) -> Result<EffectEstimate> {
    let set = mim_synthesize(ipd, spec, x_star, &cfg.synthesis, &rng.substream(0))?;
    mim_pool_set(&set, cfg, rng)
}

/// Second-stage analysis and pooling of an existing synthesis set, using
/// the same streams as [`mim_estimate`].
pub fn mim_pool_set(set: &SynthesisSet, cfg: &MimConfig, rng: &RngStream) -> Result<EffectEstimate> {
    let stage = mim_analyze(set, cfg.drop_cap)?;
    let mut pooled = match cfg.pooling {
        PoolingMethod::Rules => mim_pool_rules(&stage.estimates)?,
        PoolingMethod::PosteriorSimulation => mim_pool_posterior(&stage.estimates, cfg.pooling_draws, &rng.substream(1))?.1,
    };
    if cfg.t_interval && cfg.pooling == PoolingMethod::Rules {
        pooled.ci = pooled.t_interval()?;
    }
    Ok(pooled.to_estimate(stage.degenerate.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn allocation_rounds() {
        let z = allocate(1000, 2.0 / 3.0).unwrap();
        assert_eq!(z.iter().filter(|&&v| v == 1).count(), 667);
        assert!(z[..667].iter().all(|&v| v == 1));
    }

    fn counts_synthesis(e1: usize, n1: usize, e0: usize, n0: usize) -> SynthesisSet {
        let mut z = vec![1u8; n1];
        z.extend(vec![0u8; n0]);
        let y: Vec<u8> = (0..n1).map(|i| (i < e1) as u8).chain((0..n0).map(|i| (i < e0) as u8)).collect();
        SynthesisSet { x_star: Matrix::zeros(n1 + n0, 0), z_star: z, outcomes: vec![y] }
    }

    #[test]
    fn second_stage_matches_table() {
        let set = counts_synthesis(400, 667, 100, 333);
        let (d, v) = analyze_synthesis(&set, 0).unwrap();
        let expect = ((400.0 * 233.0) / (267.0 * 100.0) as f64).ln();
        assert!((d - expect).abs() < 1e-10);
        assert!((d - 1.25008).abs() < 1e-5);
        let v_table = 1.0 / 400.0 + 1.0 / 267.0 + 1.0 / 100.0 + 1.0 / 233.0;
        assert!((v - v_table).abs() < 1e-10);
        assert!((v - 0.020537).abs() < 1e-6);
    }

    #[test]
    fn equal_rates_give_null() {
        let set = counts_synthesis(200, 600, 100, 300);
        assert!(analyze_synthesis(&set, 0).unwrap().0.abs() < 1e-10);
    }

    #[test]
    fn single_valued_arm_is_degenerate() {
        let set = counts_synthesis(0, 667, 100, 333);
        assert_eq!(analyze_synthesis(&set, 0), Err(Error::SynthesisDegenerate(0)));
        assert_eq!(mim_analyze(&set, 0.01), Err(Error::EstimationFailed { failed: 1, total: 1 }));
    }

    #[test]
    fn rules_by_hand() {
        let p = mim_pool_rules(&[(0.0, 0.05), (1.0, 0.05)]).unwrap();
        assert_eq!((p.delta_bar, p.b), (0.5, 0.5));
        assert!((p.variance - 0.70).abs() < 1e-15);
        let e = mim_pool_rules(&[(0.1, 0.04), (0.3, 0.04)]);
        match e {
            Err(Error::NegativeVariance { m, b, v_bar }) => {
                assert_eq!(m, 2);
                assert!((b - 0.02).abs() < 1e-15 && (v_bar - 0.04).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(mim_pool_rules(&[(0.2, 0.1); 5]), Err(Error::NegativeVariance { .. })));
        assert!(matches!(mim_pool_rules(&[(0.2, 0.1)]), Err(Error::Config(_))));
    }

    #[test]
    fn t_interval_is_wider() {
        let est: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, 0.001)).collect();
        let p = mim_pool_rules(&est).unwrap();
        let (lo, hi) = p.t_interval().unwrap();
        assert!(hi - lo > p.ci.1 - p.ci.0);
    }

    #[test]
    fn posterior_pooling_without_within_variance() {
        let est: Vec<(f64, f64)> = (0..50).map(|i| ((i % 7) as f64 * 0.05, 0.0)).collect();
        let (draws, p) = mim_pool_posterior(&est, 20_000, &RngStream::new(1, 0)).unwrap();
        assert_eq!(draws.len(), 20_000);
        let rules = mim_pool_rules(&[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert!(rules.variance > 0.0);
        assert!((p.point - p.delta_bar).abs() < 0.01);
        let again = mim_pool_posterior(&est, 20_000, &RngStream::new(1, 0)).unwrap().0;
        assert_eq!(draws, again);
    }

    #[test]
    fn posterior_pooling_unstable_when_b_tiny() {
        let est: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 1e-4, 1.0)).collect();
        assert!(matches!(mim_pool_posterior(&est, 100, &RngStream::new(1, 0)), Err(Error::PoolingUnstable(_))));
    }
}
