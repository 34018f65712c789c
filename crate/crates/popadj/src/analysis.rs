//! One estimator run from files to a result document.

use std::collections::BTreeMap;
use std::path::PathBuf;

use popadj_core::bootstrap::Runner;
use popadj_core::coxph::event_time_deciles;
use popadj_core::data::{Diagnostics, Outcome};
use popadj_core::gcomp::{gcomp_bayes, gcomp_cox_on, gcomp_ml_on, gcomp_paramsim, BayesConfig, GcompConfig};
use popadj_core::glm::{fit_glm, ModelSpec};
use popadj_core::indirect::{bc_log_or, bucher};
use popadj_core::maic::{maic_estimate_on, MaicConfig};
use popadj_core::mcmc::McmcConfig;
use popadj_core::mim::{mim_pool_set, mim_synthesize, MimConfig, PoolingMethod, SynthesisConfig};
use popadj_core::population::{infer_correlation, synthesize_copula, PopulationSpec, DEFAULT_N_STAR};
use popadj_core::stc::{stc_estimate, StcCentering};
use popadj_core::{EffectEstimate, Estimand, Matrix, RngStream, Scale};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalysisMethod {
    #[serde(rename = "maic")]
    Maic,
    #[serde(rename = "stc")]
    Stc,
    #[serde(rename = "gcomp-ml")]
    GcompMl,
    #[serde(rename = "gcomp-paramsim")]
    GcompParamsim,
    #[serde(rename = "gcomp-bayes")]
    GcompBayes,
    #[serde(rename = "gcomp-cox")]
    GcompCox,
    #[serde(rename = "mim")]
    Mim,
}

impl AnalysisMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisMethod::Maic => "maic",
            AnalysisMethod::Stc => "stc",
            AnalysisMethod::GcompMl => "gcomp-ml",
            AnalysisMethod::GcompParamsim => "gcomp-paramsim",
            AnalysisMethod::GcompBayes => "gcomp-bayes",
            AnalysisMethod::GcompCox => "gcomp-cox",
            AnalysisMethod::Mim => "mim",
        }
    }

    fn needs_population(self) -> bool {
        !matches!(self, AnalysisMethod::Maic | AnalysisMethod::Stc)
    }
}

/// Fully resolved settings of one analysis. Everything here is echoed in
/// the result document except the worker count and output locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub method: AnalysisMethod,
    pub ipd: PathBuf,
    pub ald: PathBuf,
    pub effect_modifiers: Vec<String>,
    /// Target population specification; built from the aggregate data when absent.
    pub population: Option<PathBuf>,
    pub n_star: usize,
    pub boot: usize,
    pub paramsim_draws: usize,
    pub m: usize,
    /// Fraction of the synthetic population on the active treatment.
    pub alloc: f64,
    pub pooling: PoolingMethod,
    pub pooling_draws: usize,
    pub t_interval: bool,
    pub chains: usize,
    pub iters: usize,
    pub warmup: usize,
    /// Report a large R-hat as a warning instead of failing.
    pub rhat_warn: bool,
    pub center_all: bool,
    pub continuity: f64,
    /// Time point of the marginal hazard ratio; the median event time when absent.
    pub time: Option<f64>,
    /// Published B vs C log hazard ratio and its variance.
    pub bc_effect: Option<(f64, f64)>,
    pub seed: u64,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub synthesis_dir: Option<PathBuf>,
}

impl AnalysisConfig {
    pub fn new(method: AnalysisMethod, ipd: PathBuf, ald: PathBuf, effect_modifiers: Vec<String>, seed: u64) -> Self {
        let mcmc = McmcConfig::default();
        let mim = MimConfig::default();
        AnalysisConfig {
            method,
            ipd,
            ald,
            effect_modifiers,
            population: None,
            n_star: DEFAULT_N_STAR,
            boot: MaicConfig::default().boot,
            paramsim_draws: 1000,
            m: mim.synthesis.m,
            alloc: mim.synthesis.alloc,
            pooling: mim.pooling,
            pooling_draws: mim.pooling_draws,
            t_interval: false,
            chains: mcmc.chains,
            iters: mcmc.iters,
            warmup: mcmc.warmup,
            rhat_warn: false,
            center_all: false,
            continuity: 0.0,
            time: None,
            bc_effect: None,
            seed,
            workers: 1,
            synthesis_dir: None,
        }
    }

    fn mcmc(&self) -> McmcConfig {
        McmcConfig {
            chains: self.chains,
            iters: self.iters,
            warmup: self.warmup,
            strict_rhat: !self.rhat_warn,
            ..McmcConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub method: String,
    pub estimand: Estimand,
    pub scale: Scale,
    #[serde(rename = "delta_AC")]
    pub delta_ac: f64,
    #[serde(rename = "var_AC")]
    pub var_ac: f64,
    #[serde(rename = "delta_BC")]
    pub delta_bc: f64,
    #[serde(rename = "var_BC")]
    pub var_bc: f64,
    #[serde(rename = "delta_AB")]
    pub delta_ab: f64,
    #[serde(rename = "var_AB")]
    pub var_ab: f64,
    pub ci95: (f64, f64),
    #[serde(rename = "ci95_AC")]
    pub ci95_ac: (f64, f64),
    pub diagnostics: Diagnostics,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub config: AnalysisConfig,
}

impl ResultDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result document serializes") + "\n"
    }
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([("popadj".to_string(), env!("CARGO_PKG_VERSION").to_string())])
}

/// Runs replications on a dedicated thread pool.
pub struct PoolRunner {
    pool: rayon::ThreadPool,
}

impl PoolRunner {
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(PoolRunner { pool })
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl Runner for PoolRunner {
    fn run(&self, count: usize, f: &(dyn Fn(usize) -> popadj_core::Result<f64> + Sync)) -> Vec<popadj_core::Result<f64>> {
        self.pool.install(|| (0..count).into_par_iter().map(f).collect())
    }
}

const POPULATION_STREAM: u64 = 1;
const ESTIMATOR_STREAM: u64 = 2;

pub fn run_analysis(cfg: &AnalysisConfig) -> Result<ResultDocument> {
    let method = cfg.method.as_str();
    let ipd = io::read_ipd(&cfg.ipd)?;
    let survival = matches!(ipd.outcome, Outcome::Survival { .. });
    if survival != (cfg.method == AnalysisMethod::GcompCox) {
        return Err(CliError::Config(format!(
            "{method} needs {} outcomes",
            if survival { "binary" } else { "time-to-event" }
        )));
    }
    let ald = io::read_ald_with(&cfg.ald, !survival)?;
    let ald = io::align(&ald, &ipd, &cfg.effect_modifiers)?;
    let est_bc = if survival {
        let (point, variance) = cfg
            .bc_effect
            .ok_or_else(|| CliError::Config("the B vs C log hazard ratio and its variance are required".into()))?;
        EffectEstimate::wald(point, variance, Estimand::Marginal, Scale::LogHr)
    } else {
        bc_log_or(ald.counts, cfg.continuity).map_err(CliError::in_method("bc"))?
    };

    let root = RngStream::new(cfg.seed, 0);
    let rng = root.substream(ESTIMATOR_STREAM);
    let runner = PoolRunner::new(cfg.workers)?;
    let wrap = CliError::in_method;

    let x_star = if cfg.method.needs_population() {
        let spec = match &cfg.population {
            Some(p) => io::read_population_spec(p)?,
            None => {
                let rho = infer_correlation(&ipd).map_err(wrap(method))?;
                PopulationSpec::from_aggregate(&ald, &rho, cfg.n_star)
            }
        };
        if spec.marginals.len() != ipd.k() {
            return Err(CliError::Config(format!(
                "population has {} covariates, patient data {}",
                spec.marginals.len(),
                ipd.k()
            )));
        }
        synthesize_copula(&spec, &mut root.substream(POPULATION_STREAM)).map_err(wrap(method))?
    } else {
        Matrix::zeros(0, ipd.k())
    };
    let mut outcome = ModelSpec::outcome_model(ipd.k(), &ald.effect_modifiers);
    let gcomp = GcompConfig { boot: cfg.boot, ..GcompConfig::default() };

    let est_ac = match cfg.method {
        AnalysisMethod::Maic => {
            let maic = MaicConfig { boot: cfg.boot, ..MaicConfig::default() };
            maic_estimate_on(&runner, &ipd, &ald, &maic, &rng)
        }
        AnalysisMethod::Stc => {
            let centering = if cfg.center_all { StcCentering::All } else { StcCentering::EffectModifiers };
            stc_estimate(&ipd, &ald, centering)
        }
        AnalysisMethod::GcompMl => gcomp_ml_on(&runner, &ipd, &outcome, &x_star, &gcomp, &rng),
        AnalysisMethod::GcompParamsim => fit_glm(&outcome, &ipd, None)
            .and_then(|fit| gcomp_paramsim(&fit, &outcome, &x_star, cfg.paramsim_draws, &rng)),
        AnalysisMethod::GcompBayes => {
            let bayes = BayesConfig { mcmc: cfg.mcmc(), ..BayesConfig::default() };
            gcomp_bayes(&ipd, &outcome, &x_star, &bayes, &rng)
        }
        AnalysisMethod::GcompCox => {
            outcome.intercept = false;
            let t = match cfg.time {
                Some(t) => Ok(t),
                None => event_time_deciles(&ipd).map(|d| d[d.len() / 2]),
            };
            t.and_then(|t| gcomp_cox_on(&runner, &ipd, &outcome, &x_star, t, &gcomp, &rng))
        }
        AnalysisMethod::Mim => {
            let mim = MimConfig {
                synthesis: SynthesisConfig { m: cfg.m, alloc: cfg.alloc, mcmc: cfg.mcmc(), ..SynthesisConfig::default() },
                pooling: cfg.pooling,
                pooling_draws: cfg.pooling_draws,
                t_interval: cfg.t_interval,
                ..MimConfig::default()
            };
            match mim_synthesize(&ipd, &outcome, &x_star, &mim.synthesis, &rng.substream(0)) {
                Ok(set) => {
                    if let Some(dir) = &cfg.synthesis_dir {
                        io::write_synthesis_set(&set, &ipd.names, dir)?;
                    }
                    mim_pool_set(&set, &mim, &rng)
                }
                Err(e) => Err(e),
            }
        }
    }
    .map_err(wrap(method))?;

    let ab = bucher(&est_ac, &est_bc).map_err(wrap(method))?;
    let mut diagnostics = est_ac.diagnostics.clone();
    diagnostics.warnings.extend(ab.diagnostics.warnings.iter().cloned());
    Ok(ResultDocument {
        method: method.into(),
        estimand: ab.estimand,
        scale: ab.scale,
        delta_ac: est_ac.point,
        var_ac: est_ac.variance,
        delta_bc: est_bc.point,
        var_bc: est_bc.variance,
        delta_ab: ab.point,
        var_ab: ab.variance,
        ci95: ab.ci,
        ci95_ac: est_ac.ci,
        diagnostics,
        seed: cfg.seed,
        versions: versions(),
        config: cfg.clone(),
    })
}
