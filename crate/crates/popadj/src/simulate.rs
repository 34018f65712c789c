//! Parallel scenario runner and its output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use popadj_core::mcmc::McmcConfig;
use popadj_core::simstudy::{performance, run_replicate, Method, MethodSettings, PerformanceReport, ReplicateResult, ScenarioConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{versions, PoolRunner};
use crate::error::{CliError, Result};

/// Study settings echoed in the summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub scenarios: Vec<String>,
    pub methods: Vec<Method>,
    pub n_reps: usize,
    pub seed: u64,
    pub boot: usize,
    pub n_star: usize,
    pub m: usize,
    pub chains: usize,
    pub iters: usize,
    pub warmup: usize,
}

impl SimulationSettings {
    pub fn new(n_reps: usize, seed: u64) -> Self {
        let d = MethodSettings::default();
        SimulationSettings {
            scenarios: ScenarioConfig::grid(n_reps, seed).iter().map(ScenarioConfig::label).collect(),
            methods: Method::ALL.to_vec(),
            n_reps,
            seed,
            boot: d.maic.boot,
            n_star: d.n_star,
            m: d.mim.synthesis.m,
            chains: d.bayes.mcmc.chains,
            iters: d.bayes.mcmc.iters,
            warmup: d.bayes.mcmc.warmup,
        }
    }

    pub fn method_settings(&self) -> MethodSettings {
        let mut s = MethodSettings::default();
        let mcmc = McmcConfig { chains: self.chains, iters: self.iters, warmup: self.warmup, ..McmcConfig::default() };
        s.maic.boot = self.boot;
        s.gcomp.boot = self.boot;
        s.bayes.mcmc = mcmc;
        s.mim.synthesis.mcmc = mcmc;
        s.mim.synthesis.m = self.m;
        s.n_star = self.n_star;
        s
    }

    /// Scenario configurations selected by label, in grid order.
    pub fn scenario_configs(&self) -> Result<Vec<ScenarioConfig>> {
        let grid = ScenarioConfig::grid(self.n_reps, self.seed);
        for s in &self.scenarios {
            if !grid.iter().any(|c| &c.label() == s) {
                let known: Vec<String> = grid.iter().map(ScenarioConfig::label).collect();
                return Err(CliError::Config(format!("unknown scenario {s:?}; expected one of {}", known.join(", "))));
            }
        }
        Ok(grid.into_iter().filter(|c| self.scenarios.contains(&c.label())).collect())
    }
}

/// All replicates of the given scenarios, ordered by scenario, replicate
/// and method whatever the worker count.
pub fn run_scenarios(
    scenarios: &[ScenarioConfig],
    settings: &MethodSettings,
    methods: &[Method],
    workers: usize,
) -> Result<Vec<ReplicateResult>> {
    let jobs: Vec<(&ScenarioConfig, usize)> =
        scenarios.iter().flat_map(|c| (0..c.n_reps).map(move |r| (c, r))).collect();
    let runner = PoolRunner::new(workers)?;
    let out: Vec<popadj_core::Result<Vec<ReplicateResult>>> =
        runner.install(|| jobs.par_iter().map(|(c, r)| run_replicate(c, settings, *r, methods)).collect());
    let mut all = Vec::with_capacity(jobs.len() * methods.len());
    for r in out {
        all.extend(r.map_err(CliError::in_method("simulate"))?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub scenario: String,
    pub method: Method,
    pub replicates: usize,
    pub failed: usize,
    /// Absent when fewer than two replicates succeeded.
    pub performance: Option<PerformanceReport>,
}

/// Performance of every (scenario, method) pair against a true effect of zero.
pub fn summarize(results: &[ReplicateResult]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(String, Method), Vec<ReplicateResult>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in results {
        let key = (r.scenario.clone(), r.method);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.clone());
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            MethodSummary {
                scenario: key.0,
                method: key.1,
                replicates: rs.len(),
                failed: rs.iter().filter(|r| !r.ok()).count(),
                performance: performance(rs, 0.0).ok(),
            }
        })
        .collect()
}

fn fmt(v: f64) -> String {
    if v.is_finite() { v.to_string() } else { "NA".into() }
}

/// Rows `scenario, method, metric, value, mcse`.
pub fn performance_table(summary: &[MethodSummary]) -> String {
    let mut s = String::from("scenario\tmethod\tmetric\tvalue\tmcse\n");
    for m in summary {
        let rows = match &m.performance {
            Some(p) => p.rows(),
            None => vec![("failed", m.failed as f64, f64::NAN)],
        };
        for (metric, value, mcse) in rows {
            s += &format!("{}\t{}\t{metric}\t{}\t{}\n", m.scenario, m.method.as_str(), fmt(value), fmt(mcse));
        }
    }
    s
}

pub const RAW_HEADER: &str = "replicate\tpoint\tvariance\tci_lo\tci_hi\terror";

pub fn raw_file_name(scenario: &str, method: Method) -> String {
    format!("{scenario}__{}.tsv", method.as_str())
}

/// One file per (scenario, method) with a row per replicate.
pub fn write_raw(results: &[ReplicateResult], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    for r in results {
        let text = files.entry(raw_file_name(&r.scenario, r.method)).or_insert_with(|| format!("{RAW_HEADER}\n"));
        *text += &format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.replicate,
            fmt(r.point),
            fmt(r.variance),
            fmt(r.ci.0),
            fmt(r.ci.1),
            r.error.as_deref().unwrap_or("")
        );
    }
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(CliError::io(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub settings: SimulationSettings,
    pub versions: BTreeMap<String, String>,
    pub results: Vec<MethodSummary>,
}

/// Runs the study and writes `performance.tsv`, `summary.json` and, with
/// `raw`, the per-replicate files under `raw/`.
pub fn simulate(settings: &SimulationSettings, workers: usize, out: &Path, raw: bool) -> Result<SimulationSummary> {
    if settings.n_reps < 2 {
        return Err(CliError::Config("at least 2 replicates are needed".into()));
    }
    let scenarios = settings.scenario_configs()?;
    let results = run_scenarios(&scenarios, &settings.method_settings(), &settings.methods, workers)?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    if raw {
        write_raw(&results, &out.join("raw"))?;
    }
    let summary =
        SimulationSummary { settings: settings.clone(), versions: versions(), results: summarize(&results) };
    let table = out.join("performance.tsv");
    fs::write(&table, performance_table(&summary.results)).map_err(CliError::io(&table))?;
    let json = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|source| CliError::Json { path: json.clone(), source })?;
    fs::write(&json, text + "\n").map_err(CliError::io(&json))?;
    Ok(summary)
}
