//! Population-adjusted indirect treatment comparisons.
//!
//! Estimators for the marginal A vs C effect of a trial with patient-level
//! data, transported to the population of a competitor B vs C trial for which
//! only aggregate summaries exist, followed by an anchored comparison of A vs B:
//!
//! * [`maic`]: matching-adjusted indirect comparison (method-of-moments weights).
//! * [`stc`]: conventional simulated treatment comparison (conditional estimand).
//! * [`gcomp`]: parametric G-computation (bootstrap, parameter simulation,
//!   Bayesian posterior predictive, and the Cox-model variant).
//! * [`mim`]: multiple imputation marginalization.
//! * [`indirect`]: event-count log-odds ratios and the Bucher combination.
//! * [`simstudy`]: data-generating mechanism and performance measures of the
//!   benchmarking study.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and the parallel scenario runner live in the `popadj` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bootstrap;
pub mod coxph;
pub mod data;
pub mod error;
pub mod gcomp;
pub mod glm;
pub mod indirect;
pub mod maic;
pub mod mcmc;
pub mod mim;
pub mod numerics;
pub mod population;
pub mod simstudy;
pub mod stc;


pub use data::{AggregateData, ArmCounts, EffectEstimate, Estimand, IpdDataset, Outcome, Scale};
pub use error::{Error, Result};
pub use numerics::matrix::Matrix;
pub use numerics::rng::RngStream;
