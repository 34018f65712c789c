use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Binary(Vec<u8>),
    Survival { time: Vec<f64>, event: Vec<u8> },
}

impl Outcome {
    fn len(&self) -> usize {
        match self {
            Outcome::Binary(y) => y.len(),
            Outcome::Survival { time, .. } => time.len(),
        }
    }
}

/// Patient-level data of the trial with individual records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpdDataset {
    pub names: Vec<String>,
    /// `N x K` covariates.
    pub x: Matrix,
    pub trt: Vec<u8>,
    pub outcome: Outcome,
}

impl IpdDataset {
    pub fn new(names: Vec<String>, x: Matrix, trt: Vec<u8>, outcome: Outcome) -> Result<Self> {
        let n = x.rows();
        if names.len() != x.cols() {
            return Err(Error::Shape(format!("{} names for {} covariate columns", names.len(), x.cols())));
        }
        if trt.len() != n || outcome.len() != n {
            return Err(Error::Shape(format!(
                "{n} covariate rows, {} treatment values, {} outcomes",
                trt.len(),
                outcome.len()
            )));
        }
        if trt.iter().any(|&t| t > 1) {
            return Err(Error::Domain("treatment must be 0 or 1".into()));
        }
        match &outcome {
            Outcome::Binary(y) if y.iter().any(|&v| v > 1) => {
                return Err(Error::Domain("binary outcome must be 0 or 1".into()))
            }
            Outcome::Survival { time, event } => {
                if event.len() != n {
                    return Err(Error::Shape("event indicator length".into()));
                }
                if time.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
                    return Err(Error::Domain("survival times must be positive".into()));
                }
                if event.iter().any(|&e| e > 1) {
                    return Err(Error::Domain("event indicator must be 0 or 1".into()));
                }
            }
            _ => {}
        }
        Ok(IpdDataset { names, x, trt, outcome })
    }

    /// Binary-outcome dataset with default names `X1..XK`.
    pub fn binary(x: Matrix, trt: Vec<u8>, y: Vec<u8>) -> Result<Self> {
        let names = default_names(x.cols());
        Self::new(names, x, trt, Outcome::Binary(y))
    }

    pub fn survival(x: Matrix, trt: Vec<u8>, time: Vec<f64>, event: Vec<u8>) -> Result<Self> {
        let names = default_names(x.cols());
        Self::new(names, x, trt, Outcome::Survival { time, event })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn k(&self) -> usize {
        self.x.cols()
    }

    pub fn binary_outcome(&self) -> Result<&[u8]> {
        match &self.outcome {
            Outcome::Binary(y) => Ok(y),
            Outcome::Survival { .. } => Err(Error::Config("a binary outcome is required".into())),
        }
    }

    /// Rows `idx` (with repeats) as a new dataset.
    pub fn select_rows(&self, idx: &[usize]) -> IpdDataset {
        let outcome = match &self.outcome {
            Outcome::Binary(y) => Outcome::Binary(idx.iter().map(|&i| y[i]).collect()),
            Outcome::Survival { time, event } => Outcome::Survival {
                time: idx.iter().map(|&i| time[i]).collect(),
                event: idx.iter().map(|&i| event[i]).collect(),
            },
        };
        IpdDataset {
            names: self.names.clone(),
            x: self.x.select_rows(idx),
            trt: idx.iter().map(|&i| self.trt[i]).collect(),
            outcome,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub fn default_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("X{j}")).collect()
}

/// Event counts of the two arms of the aggregate-only trial (B active, C control).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub y_b: u64,
    pub n_b: u64,
    pub y_c: u64,
    pub n_c: u64,
}

/// Published summaries of the comparator trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateData {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Column indices flagged as effect modifiers.
    pub effect_modifiers: Vec<usize>,
    pub counts: ArmCounts,
}

impl AggregateData {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn em_means(&self) -> Vec<f64> {
        self.effect_modifiers.iter().map(|&j| self.means[j]).collect()
    }

    /// Checks that this summary describes the same covariates as `ipd`.
    pub fn check_against(&self, ipd: &IpdDataset) -> Result<()> {
        if self.means.len() != ipd.k() || self.sds.len() != ipd.k() {
            return Err(Error::Shape(format!(
                "aggregate data has {} covariates, patient data {}",
                self.means.len(),
                ipd.k()
            )));
        }
        if self.effect_modifiers.is_empty() {
            return Err(Error::Config("no effect modifiers flagged".into()));
        }
        if self.effect_modifiers.iter().any(|&j| j >= ipd.k()) {
            return Err(Error::Config("effect modifier index out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Marginal,
    Conditional,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Marginal => "marginal",
            Estimand::Conditional => "conditional",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    LogOr,
    LogHr,
    LogRr,
    MeanDifference,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::LogOr => "log_or",
            Scale::LogHr => "log_hr",
            Scale::LogRr => "log_rr",
            Scale::MeanDifference => "mean_difference",
        }
    }
}

/// Side information attached to an estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Resamples, draws or syntheses attempted and how many were dropped.
    pub attempted: usize,
    pub failed: usize,
    pub ess: Option<f64>,
    pub max_rhat: Option<f64>,
    pub warnings: Vec<String>,
}

/// A relative effect on the linear-predictor scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub point: f64,
    pub variance: f64,
    pub ci: (f64, f64),
    pub estimand: Estimand,
    pub scale: Scale,
    pub diagnostics: Diagnostics,
}

pub const Z_975: f64 = 1.959_963_984_540_054;

impl EffectEstimate {
    /// Estimate with a Wald 95% interval.
    pub fn wald(point: f64, variance: f64, estimand: Estimand, scale: Scale) -> Self {
        let half = Z_975 * variance.sqrt();
        EffectEstimate {
            point,
            variance,
            ci: (point - half, point + half),
            estimand,
            scale,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn se(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn with_diagnostics(mut self, d: Diagnostics) -> Self {
        self.diagnostics = d;
        self
    }
}
