use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use popadj::analysis::{run_analysis, AnalysisConfig, AnalysisMethod};
use popadj::error::{CliError, Result};
use popadj::simulate::{simulate, SimulationSettings};
use popadj_core::mim::PoolingMethod;
use popadj_core::simstudy::{Method, DEFAULT_REPS, FULL_REPS};

#[derive(Parser)]
#[command(name = "popadj", version, about = "Population-adjusted indirect treatment comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Matching-adjusted indirect comparison.
    Maic(Common),
    /// Conventional simulated treatment comparison (conditional estimand).
    Stc {
        #[command(flatten)]
        common: Common,
        /// Center every covariate, not only the effect modifiers.
        #[arg(long)]
        center_all: bool,
    },
    /// Parametric G-computation.
    Gcomp {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Variant::Ml)]
        variant: Variant,
        /// Parameter draws of the paramsim variant.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[command(flatten)]
        mcmc: Mcmc,
        /// Time of the marginal hazard ratio (cox variant); median event time by default.
        #[arg(long)]
        time: Option<f64>,
        /// Published B vs C log hazard ratio (cox variant).
        #[arg(long, requires = "bc_var")]
        bc_log_hr: Option<f64>,
        #[arg(long, requires = "bc_log_hr")]
        bc_var: Option<f64>,
    },
    /// Multiple imputation marginalization.
    Mim {
        #[command(flatten)]
        common: Common,
        /// Number of syntheses.
        #[arg(long, default_value_t = 1000)]
        m: usize,
        /// Fraction of the synthetic population on treatment A.
        #[arg(long, default_value_t = 2.0 / 3.0)]
        alloc: f64,
        #[arg(long, value_enum, default_value_t = Pooling::Rules)]
        pooling: Pooling,
        #[arg(long, default_value_t = 100_000)]
        pooling_draws: usize,
        /// Heavier-tailed t interval for rules pooling.
        #[arg(long)]
        t_interval: bool,
        #[command(flatten)]
        mcmc: Mcmc,
        /// Write each synthetic dataset to this directory.
        #[arg(long)]
        synthesis_dir: Option<PathBuf>,
    },
    /// Run the benchmarking simulation study.
    Simulate {
        /// Replicates per scenario.
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        /// Use the full-scale replicate count.
        #[arg(long, conflicts_with = "reps")]
        full: bool,
        /// Scenario labels such as N600_strong; all nine by default.
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "maic,stc,gcomp-ml,gcomp-bayes,mim")]
        methods: Vec<String>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 1000)]
        boot: usize,
        #[arg(long, default_value_t = 1000)]
        n_star: usize,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[command(flatten)]
        mcmc: Mcmc,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Skip the per-replicate estimate files.
        #[arg(long)]
        no_raw: bool,
    },
    /// Performance table from per-replicate estimate files.
    Report {
        /// Directory of raw estimate files.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Patient-level data of the A vs C trial.
    #[arg(long)]
    ipd: PathBuf,
    /// Aggregate data of the B vs C trial.
    #[arg(long)]
    ald: PathBuf,
    /// Effect-modifier column names.
    #[arg(long = "em", value_delimiter = ',', required = true)]
    effect_modifiers: Vec<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    /// Size of the synthetic target population.
    #[arg(long, default_value_t = 1000)]
    n_star: usize,
    /// Target population specification (JSON) replacing the one built from the aggregate data.
    #[arg(long)]
    population: Option<PathBuf>,
    /// Continuity correction added to every cell of the B vs C table.
    #[arg(long, default_value_t = 0.0)]
    continuity: f64,
    /// Result file; standard output by default.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct Mcmc {
    #[arg(long, default_value_t = 2)]
    chains: usize,
    #[arg(long, default_value_t = 4000)]
    iters: usize,
    #[arg(long, default_value_t = 2000)]
    warmup: usize,
    /// Warn about R-hat above 1.1 instead of failing.
    #[arg(long)]
    rhat_warn: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Ml,
    Paramsim,
    Bayes,
    Cox,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pooling {
    Rules,
    Posterior,
}

impl Common {
    fn config(&self, method: AnalysisMethod) -> AnalysisConfig {
        let mut c = AnalysisConfig::new(method, self.ipd.clone(), self.ald.clone(), self.effect_modifiers.clone(), self.seed);
        c.workers = self.workers;
        c.boot = self.boot;
        c.n_star = self.n_star;
        c.population = self.population.clone();
        c.continuity = self.continuity;
        c
    }
}

fn set_mcmc(c: &mut AnalysisConfig, m: Mcmc) {
    c.chains = m.chains;
    c.iters = m.iters;
    c.warmup = m.warmup;
    c.rhat_warn = m.rhat_warn;
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io { path: p.clone(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn analyze(common: &Common, cfg: AnalysisConfig) -> Result<()> {
    let doc = run_analysis(&cfg)?;
    emit(&doc.to_json(), common.output.as_ref())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Maic(common) => analyze(&common, common.config(AnalysisMethod::Maic)),
        Command::Stc { common, center_all } => {
            let mut c = common.config(AnalysisMethod::Stc);
            c.center_all = center_all;
            analyze(&common, c)
        }
        Command::Gcomp { common, variant, draws, mcmc, time, bc_log_hr, bc_var } => {
            let method = match variant {
                Variant::Ml => AnalysisMethod::GcompMl,
                Variant::Paramsim => AnalysisMethod::GcompParamsim,
                Variant::Bayes => AnalysisMethod::GcompBayes,
                Variant::Cox => AnalysisMethod::GcompCox,
            };
            let mut c = common.config(method);
            c.paramsim_draws = draws;
            set_mcmc(&mut c, mcmc);
            c.time = time;
            c.bc_effect = bc_log_hr.zip(bc_var);
            analyze(&common, c)
        }
        Command::Mim { common, m, alloc, pooling, pooling_draws, t_interval, mcmc, synthesis_dir } => {
            let mut c = common.config(AnalysisMethod::Mim);
            c.m = m;
            c.alloc = alloc;
            c.pooling = match pooling {
                Pooling::Rules => PoolingMethod::Rules,
                Pooling::Posterior => PoolingMethod::PosteriorSimulation,
            };
            c.pooling_draws = pooling_draws;
            c.t_interval = t_interval;
            set_mcmc(&mut c, mcmc);
            c.synthesis_dir = synthesis_dir;
            analyze(&common, c)
        }
        Command::Simulate { reps, full, scenario, methods, seed, workers, boot, n_star, m, mcmc, out, no_raw } => {
            let mut s = SimulationSettings::new(if full { FULL_REPS } else { reps }, seed);
            if !scenario.is_empty() {
                s.scenarios = scenario;
            }
            s.methods = methods
                .iter()
                .map(|m| Method::parse(m))
                .collect::<popadj_core::Result<_>>()
                .map_err(|e| CliError::Config(e.to_string()))?;
            s.boot = boot;
            s.n_star = n_star;
            s.m = m;
            s.chains = mcmc.chains;
            s.iters = mcmc.iters;
            s.warmup = mcmc.warmup;
            let summary = simulate(&s, workers, &out, !no_raw)?;
            eprintln!("{} scenario-method summaries written to {}", summary.results.len(), out.display());
            Ok(())
        }
        Command::Report { raw, output } => emit(&popadj::report::report(&raw)?, output.as_ref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
