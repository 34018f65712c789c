//! Benchmarking study: data-generating mechanism, replicate runner and
//! performance measures with Monte Carlo standard errors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{default_names, AggregateData, ArmCounts, EffectEstimate, IpdDataset};
use crate::error::{Error, Result};
use crate::gcomp::{gcomp_bayes, gcomp_ml, BayesConfig, GcompConfig};
use crate::glm::ModelSpec;
use crate::indirect::{bc_log_or, bucher};
use crate::maic::{maic_estimate, MaicConfig};
use crate::mim::{allocate, mim_estimate, MimConfig};
use crate::numerics::dist::{bernoulli, mvn_sample};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::RngStream;
use crate::numerics::{expit, mean, sample_variance};
use crate::population::{infer_correlation, synthesize_copula, PopulationSpec, DEFAULT_N_STAR};
use crate::stc::{stc_estimate, StcCentering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "maic")]
    Maic,
    #[serde(rename = "stc")]
    Stc,
    #[serde(rename = "gcomp-ml")]
    GcompMl,
    #[serde(rename = "gcomp-bayes")]
    GcompBayes,
    #[serde(rename = "mim")]
    Mim,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Maic, Method::Stc, Method::GcompMl, Method::GcompBayes, Method::Mim];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Maic => "maic",
            Method::Stc => "stc",
            Method::GcompMl => "gcomp-ml",
            Method::GcompBayes => "gcomp-bayes",
            Method::Mim => "mim",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }

    /// Substream key. Stable, so adding a method leaves the others untouched.
    pub fn key(self) -> u64 {
        match self {
            Method::Maic => 1,
            Method::Stc => 2,
            Method::GcompMl => 3,
            Method::GcompBayes => 4,
            Method::Mim => 5,
        }
    }
}

/// Covariate overlap between the two trials, set by the AC covariate means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Strong,
    Moderate,
    Poor,
}

impl Overlap {
    pub const ALL: [Overlap; 3] = [Overlap::Strong, Overlap::Moderate, Overlap::Poor];

    pub fn ac_mean(self) -> f64 {
        match self {
            Overlap::Strong => 0.45,
            Overlap::Moderate => 0.3,
            Overlap::Poor => 0.15,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Overlap::Strong => "strong",
            Overlap::Moderate => "moderate",
            Overlap::Poor => "poor",
        }
    }
}

pub const N_AC_GRID: [usize; 3] = [200, 400, 600];
pub const DEFAULT_REPS: usize = 200;
pub const FULL_REPS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Substream key of the scenario.
    pub id: u64,
    pub n_ac: usize,
    pub n_bc: usize,
    /// Fraction of each trial on the active treatment.
    pub alloc: f64,
    pub ac_mean: f64,
    pub bc_mean: f64,
    pub sd: f64,
    pub correlation: f64,
    pub k: usize,
    pub effect_modifiers: Vec<usize>,
    pub beta0: f64,
    /// Main effect of every covariate.
    pub beta_prognostic: f64,
    /// Treatment interaction of every effect modifier.
    pub beta_interaction: f64,
    pub beta_treatment: f64,
    pub n_reps: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(n_ac: usize, overlap: Overlap, n_reps: usize, seed: u64) -> Self {
        let i = N_AC_GRID.iter().position(|&n| n == n_ac).unwrap_or(N_AC_GRID.len());
        let o = Overlap::ALL.iter().position(|&v| v == overlap).unwrap_or(0);
        ScenarioConfig {
            id: (i * Overlap::ALL.len() + o) as u64,
            n_ac,
            n_bc: 600,
            alloc: 2.0 / 3.0,
            ac_mean: overlap.ac_mean(),
            bc_mean: 0.6,
            sd: 0.4,
            correlation: 0.2,
            k: 4,
            effect_modifiers: vec![0, 1],
            beta0: -0.62,
            beta_prognostic: -(0.5f64.ln()),
            beta_interaction: -(0.67f64.ln()),
            beta_treatment: 0.17f64.ln(),
            n_reps,
            seed,
        }
    }

    /// The nine cells crossing trial size with overlap.
    pub fn grid(n_reps: usize, seed: u64) -> Vec<ScenarioConfig> {
        N_AC_GRID
            .iter()
            .flat_map(|&n| Overlap::ALL.iter().map(move |&o| ScenarioConfig::new(n, o, n_reps, seed)))
            .collect()
    }

    pub fn label(&self) -> String {
        let overlap = Overlap::ALL
            .iter()
            .find(|o| o.ac_mean() == self.ac_mean)
            .map(|o| o.as_str().to_string())
            .unwrap_or_else(|| format!("mean{}", self.ac_mean));
        format!("N{}_{}", self.n_ac, overlap)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ac < 2 || self.n_bc < 2 || self.n_reps == 0 || self.k == 0 {
            return Err(Error::Config("trial sizes, covariate count and replicates must be positive".into()));
        }
        if !(self.alloc > 0.0 && self.alloc < 1.0) {
            return Err(Error::Config(format!("allocation {} outside (0, 1)", self.alloc)));
        }
        if !(self.sd > 0.0) || !(self.correlation > -1.0 / (self.k as f64 - 1.0).max(1.0) && self.correlation < 1.0) {
            return Err(Error::Config("covariate SD must be positive and the correlation admissible".into()));
        }
        if self.effect_modifiers.len() != 2 || self.effect_modifiers.iter().any(|&j| j >= self.k) {
            return Err(Error::Config("exactly two effect modifiers among the covariates are required".into()));
        }
        Ok(())
    }

    fn covariance(&self) -> Matrix {
        let v = self.sd * self.sd;
        Matrix::from_fn(self.k, self.k, |i, j| if i == j { v } else { self.correlation * v })
    }

    /// Linear predictor of the data-generating outcome model.
    pub fn linear_predictor(&self, x: &[f64], z: u8) -> f64 {
        let mut eta = self.beta0 + self.beta_prognostic * x.iter().sum::<f64>();
        if z == 1 {
            eta += self.beta_treatment + self.beta_interaction * self.effect_modifiers.iter().map(|&j| x[j]).sum::<f64>();
        }
        eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trial {
    /// Patient-level A vs C trial.
    Ac,
    /// Aggregate-only B vs C trial.
    Bc,
}

/// Bernoulli outcomes for given covariates and assignments.
pub fn simulate_outcomes(cfg: &ScenarioConfig, x: &Matrix, trt: &[u8], rng: &mut RngStream) -> Vec<u8> {
    x.row_iter().zip(trt).map(|(r, &z)| bernoulli(rng, expit(cfg.linear_predictor(r, z)))).collect()
}

pub fn generate_trial(cfg: &ScenarioConfig, which: Trial, rng: &mut RngStream) -> Result<IpdDataset> {
    cfg.validate()?;
    let (n, mu) = match which {
        Trial::Ac => (cfg.n_ac, cfg.ac_mean),
        Trial::Bc => (cfg.n_bc, cfg.bc_mean),
    };
    let x = mvn_sample(&vec![mu; cfg.k], &cfg.covariance(), n, rng)?;
    let trt = allocate(n, cfg.alloc)?;
    let y = simulate_outcomes(cfg, &x, &trt, rng);
    IpdDataset::new(default_names(cfg.k), x, trt, crate::data::Outcome::Binary(y))
}

/// Published summaries of a trial: covariate means and SDs, and event
/// counts by arm.
pub fn aggregate_bc(ipd: &IpdDataset, effect_modifiers: &[usize]) -> Result<AggregateData> {
    let y = ipd.binary_outcome()?;
    let (means, sds) = (0..ipd.k())
        .map(|j| {
            let c = ipd.x.col(j);
            (mean(&c), sample_variance(&c).sqrt())
        })
        .unzip();
    let mut counts = ArmCounts { y_b: 0, n_b: 0, y_c: 0, n_c: 0 };
    for (&z, &yi) in ipd.trt.iter().zip(y) {
        if z == 1 {
            counts.n_b += 1;
            counts.y_b += yi as u64;
        } else {
            counts.n_c += 1;
            counts.y_c += yi as u64;
        }
    }
    Ok(AggregateData { names: ipd.names.clone(), means, sds, effect_modifiers: effect_modifiers.to_vec(), counts })
}

/// Estimator settings used inside the study.
#[derive(Debug, Clone, Copy)]
pub struct MethodSettings {
    pub maic: MaicConfig,
    pub gcomp: GcompConfig,
    pub bayes: BayesConfig,
    pub mim: MimConfig,
    pub n_star: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            maic: MaicConfig::default(),
            gcomp: GcompConfig::default(),
            bayes: BayesConfig::default(),
            mim: MimConfig::default(),
            n_star: DEFAULT_N_STAR,
        }
    }
}

/// One method's A vs B result in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub scenario: String,
    pub replicate: usize,
    pub method: Method,
    pub point: f64,
    pub variance: f64,
    pub ci: (f64, f64),
    /// Error kind when the method failed in this replicate.
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

const DATA_KEY: u64 = 0;
const POPULATION_KEY: u64 = 100;

/// Fresh trials for one replicate, then every requested method. A failing
/// method is recorded without affecting the others.
pub fn run_replicate(
    cfg: &ScenarioConfig,
    settings: &MethodSettings,
    replicate: usize,
    methods: &[Method],
) -> Result<Vec<ReplicateResult>> {
    let rep = RngStream::new(cfg.seed, 0).substream(cfg.id).substream(replicate as u64);
    let mut data_rng = rep.substream(DATA_KEY);
    let ac = generate_trial(cfg, Trial::Ac, &mut data_rng)?;
    let bc_ipd = generate_trial(cfg, Trial::Bc, &mut data_rng)?;
    let ald = aggregate_bc(&bc_ipd, &cfg.effect_modifiers)?;
    let label = cfg.label();

    let needs_population = methods.iter().any(|m| matches!(m, Method::GcompMl | Method::GcompBayes | Method::Mim));
    let x_star = if needs_population {
        let spec = PopulationSpec::from_aggregate(&ald, &infer_correlation(&ac)?, settings.n_star);
        Some(synthesize_copula(&spec, &mut rep.substream(POPULATION_KEY)))
    } else {
        None
    };
    let est_bc = bc_log_or(ald.counts, 0.0);
    let outcome_spec = ModelSpec::outcome_model(cfg.k, &cfg.effect_modifiers);

    Ok(methods
        .iter()
        .map(|&method| {
            let r = rep.substream(method.key());
            let est_ac = match method {
                Method::Maic => maic_estimate(&ac, &ald, &settings.maic, &r),
                Method::Stc => stc_estimate(&ac, &ald, StcCentering::EffectModifiers),
                Method::GcompMl => population(&x_star).and_then(|x| gcomp_ml(&ac, &outcome_spec, &x, &settings.gcomp, &r)),
                Method::GcompBayes => {
                    population(&x_star).and_then(|x| gcomp_bayes(&ac, &outcome_spec, &x, &settings.bayes, &r))
                }
                Method::Mim => population(&x_star).and_then(|x| mim_estimate(&ac, &outcome_spec, &x, &settings.mim, &r)),
            };
            let ab = est_ac.and_then(|ac| bucher(&ac, est_bc.as_ref().map_err(Clone::clone)?));
            to_result(&label, replicate, method, ab)
        })
        .collect())
}

fn population(x: &Option<Result<Matrix>>) -> Result<Matrix> {
    x.clone().expect("population synthesized when required")
}

fn to_result(scenario: &str, replicate: usize, method: Method, est: Result<EffectEstimate>) -> ReplicateResult {
    match est {
        Ok(e) => ReplicateResult {
            scenario: scenario.into(),
            replicate,
            method,
            point: e.point,
            variance: e.variance,
            ci: e.ci,
            error: None,
        },
        Err(e) => ReplicateResult {
            scenario: scenario.into(),
            replicate,
            method,
            point: f64::NAN,
            variance: f64::NAN,
            ci: (f64::NAN, f64::NAN),
            error: Some(e.kind().into()),
        },
    }
}

/// A performance measure and its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub n: usize,
    pub failed: usize,
    pub bias: Metric,
    /// Empirical standard error.
    pub ese: Metric,
    /// Mean squared error about the true value.
    pub mse: Metric,
    /// `bias^2 + ESE^2 (n - 1) / n`, equal to `mse` up to rounding.
    pub mse_decomposed: f64,
    /// Mean model standard error over the empirical standard error.
    pub variability_ratio: Metric,
    pub coverage: Metric,
    /// Bias over the empirical standard error.
    pub standardized_bias: f64,
}

impl PerformanceReport {
    /// `(name, value, mcse)` rows for tabular output.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        vec![
            ("bias", self.bias.value, self.bias.mcse),
            ("ese", self.ese.value, self.ese.mcse),
            ("mse", self.mse.value, self.mse.mcse),
            ("vr", self.variability_ratio.value, self.variability_ratio.mcse),
            ("coverage", self.coverage.value, self.coverage.mcse),
            ("std_bias", self.standardized_bias, f64::NAN),
            ("failed", self.failed as f64, f64::NAN),
        ]
    }
}

pub fn coverage_mcse(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Performance of one method over replicates; failed replicates are counted
/// and excluded.
pub fn performance(results: &[ReplicateResult], truth: f64) -> Result<PerformanceReport> {
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.ok()).collect();
    let failed = results.len() - ok.len();
    let n = ok.len();
    if n < 2 {
        return Err(Error::Config(format!("{n} successful replicates; at least 2 are needed")));
    }
    let nf = n as f64;
    let est: Vec<f64> = ok.iter().map(|r| r.point).collect();
    let se: Vec<f64> = ok.iter().map(|r| r.variance.sqrt()).collect();

    let bias = mean(&est) - truth;
    let ese = sample_variance(&est).sqrt();
    let sq: Vec<f64> = est.iter().map(|d| (d - truth).powi(2)).collect();
    let mse = mean(&sq);
    let mse_mcse = (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (nf * (nf - 1.0))).sqrt();

    let mean_se = mean(&se);
    let vr = mean_se / ese;
    let var_mean_se = sample_variance(&se) / nf;
    let var_ese = ese * ese / (2.0 * (nf - 1.0));
    let vr_mcse = vr * (var_mean_se / (mean_se * mean_se) + var_ese / (ese * ese)).sqrt();

    let covered = ok.iter().filter(|r| r.ci.0 <= truth && truth <= r.ci.1).count() as f64 / nf;

    Ok(PerformanceReport {
        n,
        failed,
        bias: Metric { value: bias, mcse: ese / nf.sqrt() },
        ese: Metric { value: ese, mcse: ese / (2.0 * (nf - 1.0)).sqrt() },
        mse: Metric { value: mse, mcse: mse_mcse },
        mse_decomposed: bias * bias + ese * ese * (nf - 1.0) / nf,
        variability_ratio: Metric { value: vr, mcse: vr_mcse },
        coverage: Metric { value: covered, mcse: coverage_mcse(covered, n) },
        standardized_bias: bias / ese,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(n_ac: usize, overlap: Overlap) -> ScenarioConfig {
        ScenarioConfig::new(n_ac, overlap, 1, 7)
    }

    fn fake(points: &[f64], ses: &[f64]) -> Vec<ReplicateResult> {
        points
            .iter()
            .zip(ses)
            .enumerate()
            .map(|(i, (&p, &s))| ReplicateResult {
                scenario: "t".into(),
                replicate: i,
                method: Method::Maic,
                point: p,
                variance: s * s,
                ci: (p - 1.96 * s, p + 1.96 * s),
                error: None,
            })
            .collect()
    }

    #[test]
    fn grid_is_full_cross() {
        let g = ScenarioConfig::grid(10, 1);
        assert_eq!(g.len(), 9);
        let mut ids: Vec<u64> = g.iter().map(|c| c.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 9);
        assert_eq!(g[8].label(), "N600_poor");
        assert!((g[0].beta_treatment - 0.17f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn baseline_event_rate() {
        let mut cfg = quick(600, Overlap::Strong);
        cfg.n_ac = 20_000;
        cfg.beta_prognostic = 0.0;
        cfg.beta_interaction = 0.0;
        cfg.beta_treatment = 0.0;
        let d = generate_trial(&cfg, Trial::Ac, &mut RngStream::new(3, 0)).unwrap();
        let rate = mean(&d.binary_outcome().unwrap().iter().map(|&v| v as f64).collect::<Vec<_>>());
        let p = expit(-0.62);
        assert!((p - 0.35).abs() < 0.001);
        assert!((rate - p).abs() < 3.0 * (p * (1.0 - p) / 20_000.0).sqrt());
    }

    #[test]
    fn active_arm_rate_at_zero_covariates() {
        let cfg = quick(600, Overlap::Strong);
        let n = 40_000;
        let x = Matrix::zeros(n, 4);
        let y = simulate_outcomes(&cfg, &x, &vec![1; n], &mut RngStream::new(4, 0));
        let rate = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let p = expit(-0.62 + 0.17f64.ln());
        assert!((p - 0.0838).abs() < 1e-4);
        assert!((rate - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn allocation_and_determinism() {
        let cfg = quick(600, Overlap::Poor);
        let a = generate_trial(&cfg, Trial::Ac, &mut RngStream::new(5, 0)).unwrap();
        let b = generate_trial(&cfg, Trial::Ac, &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trt.iter().filter(|&&z| z == 1).count(), 400);
        let agg = aggregate_bc(&a, &[0, 1]).unwrap();
        assert_eq!(agg.counts.n_b + agg.counts.n_c, 600);
        assert_eq!(agg.counts.n_b, 400);
    }

    #[test]
    fn constant_covariate_has_zero_sd() {
        let x = Matrix::from_fn(5, 2, |i, j| if j == 0 { 1.5 } else { i as f64 });
        let d = IpdDataset::binary(x, vec![1, 1, 0, 0, 0], vec![1, 0, 1, 0, 0]).unwrap();
        let agg = aggregate_bc(&d, &[0]).unwrap();
        assert_eq!(agg.sds[0], 0.0);
        assert_eq!(agg.counts, ArmCounts { y_b: 1, n_b: 2, y_c: 1, n_c: 3 });
    }

    #[test]
    fn null_trial_gives_null_log_or() {
        let mut cfg = quick(600, Overlap::Strong);
        cfg.n_bc = 6000;
        cfg.beta_treatment = 0.0;
        cfg.beta_interaction = 0.0;
        let bc = generate_trial(&cfg, Trial::Bc, &mut RngStream::new(6, 0)).unwrap();
        let e = bc_log_or(aggregate_bc(&bc, &[0, 1]).unwrap().counts, 0.0).unwrap();
        assert!(e.point.abs() < 3.0 * e.se());
    }

    #[test]
    fn performance_by_hand() {
        let r = performance(&fake(&[-1.0, 1.0], &[1.0, 1.0]), 0.0).unwrap();
        assert_eq!(r.bias.value, 0.0);
        assert!((r.ese.value - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.mse.value, 1.0);
        assert!((r.variability_ratio.value - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.coverage.value, 1.0);
        assert!(matches!(performance(&fake(&[1.0], &[1.0]), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn coverage_mcse_values() {
        assert!((100.0 * coverage_mcse(0.95, 2000) - 0.487).abs() < 5e-4);
        assert!((100.0 * coverage_mcse(0.5, 2000) - 1.118).abs() < 5e-4);
    }

    #[test]
    fn failed_replicates_are_counted() {
        let mut rs = fake(&[0.1, -0.2, 0.3], &[0.2, 0.2, 0.2]);
        rs[1].error = Some("SeparationError".into());
        let r = performance(&rs, 0.0).unwrap();
        assert_eq!((r.n, r.failed), (2, 1));
        assert!((r.bias.value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn smoke_replicate_all_methods() {
        let cfg = quick(200, Overlap::Strong);
        let mut s = MethodSettings::default();
        s.maic.boot = 20;
        s.gcomp.boot = 20;
        s.bayes.mcmc.iters = 400;
        s.bayes.mcmc.warmup = 200;
        s.bayes.mcmc.strict_rhat = false;
        s.mim.synthesis.mcmc = s.bayes.mcmc;
        s.mim.synthesis.m = 50;
        s.n_star = 300;
        let out = run_replicate(&cfg, &s, 0, &Method::ALL).unwrap();
        assert_eq!(out.len(), 5);
        for r in &out {
            assert!(r.ok(), "{r:?}");
            assert!(r.point.is_finite() && r.variance > 0.0);
        }
        let again = run_replicate(&cfg, &s, 0, &[Method::Mim, Method::Maic]).unwrap();
        assert_eq!(again[0], out[4]);
        assert_eq!(again[1], out[0]);
    }
}
