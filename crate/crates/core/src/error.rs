use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure mode of the estimators.
///
/// Variants carry enough context to be rendered as a structured error
/// document by the command line front end (see [`Error::kind`]).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("matrix is not positive definite")]
    NotPosDef,
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("separation detected: {0}")]
    Separation(String),
    #[error("rank-deficient design: {0}")]
    Rank(String),
    #[error("time {t} lies beyond the last observed event time {last}")]
    Extrapolation { t: f64, last: f64 },
    #[error("marginal log hazard ratio undefined at t = {t} (arm survival {survival})")]
    UndefinedAtTime { t: f64, survival: f64 },
    #[error("covariate column {0} is constant")]
    DegenerateCovariate(usize),
    #[error("no feasible weighting solution: {0}")]
    NoFeasibleWeights(String),
    #[error("estimation failed: {failed} of {total} resamples or draws failed")]
    EstimationFailed { failed: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("average prediction is degenerate ({0}); contrast undefined")]
    DegenerateMean(f64),
    #[error("MCMC diagnostics failed: max R-hat {rhat:.4} exceeds {threshold}")]
    DiagnosticsFailed { rhat: f64, threshold: f64 },
    #[error("synthesis {0} has an arm with a single outcome value")]
    SynthesisDegenerate(usize),
    #[error("combining rules produced a non-positive variance (M = {m}, b = {b}, mean within variance = {v_bar})")]
    NegativeVariance { m: usize, b: f64, v_bar: f64 },
    #[error("posterior pooling unstable: rejection rate {0:.3}")]
    PoolingUnstable(f64),
    #[error("2x2 table has an empty cell")]
    ZeroCell,
    #[error("cannot combine estimates on different scales ({0} vs {1})")]
    ScaleMismatch(&'static str, &'static str),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::NotPosDef => "NotPosDef",
            Error::Domain(_) => "DomainError",
            Error::Shape(_) => "ShapeError",
            Error::Separation(_) => "SeparationError",
            Error::Rank(_) => "RankError",
            Error::Extrapolation { .. } => "ExtrapolationError",
            Error::UndefinedAtTime { .. } => "UndefinedAtTime",
            Error::DegenerateCovariate(_) => "DegenerateCovariate",
            Error::NoFeasibleWeights(_) => "NoFeasibleWeights",
            Error::EstimationFailed { .. } => "EstimationFailed",
            Error::Config(_) => "ConfigError",
            Error::DegenerateMean(_) => "DegenerateMean",
            Error::DiagnosticsFailed { .. } => "DiagnosticsFailed",
            Error::SynthesisDegenerate(_) => "SynthesisDegenerate",
            Error::NegativeVariance { .. } => "NegativeVarianceError",
            Error::PoolingUnstable(_) => "PoolingUnstable",
            Error::ZeroCell => "ZeroCellError",
            Error::ScaleMismatch(..) => "ScaleMismatch",
        }
    }

    /// Failures that only invalidate a single bootstrap resample or draw.
    pub fn is_resample_failure(&self) -> bool {
        matches!(
            self,
            Error::NoFeasibleWeights(_)
                | Error::Separation(_)
                | Error::Rank(_)
                | Error::NumericalFailure(_)
                | Error::NotPosDef
                | Error::DegenerateMean(_)
                | Error::UndefinedAtTime { .. }
                | Error::Extrapolation { .. }
                | Error::DegenerateCovariate(_)
        )
    }
}
