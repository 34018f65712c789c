//! Anchored indirect comparison through the common comparator.

use alloc::format;
use alloc::string::String;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;

use crate::data::{ArmCounts, Diagnostics, EffectEstimate, Estimand, Scale};
use crate::error::{Error, Result};

pub const CONDITIONAL_WARNING: &str =
    "the A vs C estimate is conditional; it targets a different estimand from the marginal B vs C estimate";

/// Log odds ratio of B vs C from event counts, with its delta-method variance.
/// `continuity` is added to every cell when nonzero.
pub fn bc_log_or(counts: ArmCounts, continuity: f64) -> Result<EffectEstimate> {
    let ArmCounts { y_b, n_b, y_c, n_c } = counts;
    if y_b > n_b || y_c > n_c {
        return Err(Error::Domain(format!("event counts exceed arm sizes: {y_b}/{n_b}, {y_c}/{n_c}")));
    }
    let cells = [y_b, n_b - y_b, y_c, n_c - y_c];
    if continuity == 0.0 && cells.contains(&0) {
        return Err(Error::ZeroCell);
    }
    let [a, b, c, d] = cells.map(|v| v as f64 + continuity);
    let point = (a * d / (c * b)).ln();
    let variance = 1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d;
    Ok(EffectEstimate::wald(point, variance, Estimand::Marginal, Scale::LogOr))
}

/// `est_ac - est_bc` with summed variances and a Wald interval. A
/// conditional `est_ac` is accepted with a warning.
pub fn bucher(est_ac: &EffectEstimate, est_bc: &EffectEstimate) -> Result<EffectEstimate> {
    if est_ac.scale != est_bc.scale {
        return Err(Error::ScaleMismatch(est_ac.scale.as_str(), est_bc.scale.as_str()));
    }
    let mut warnings = alloc::vec::Vec::new();
    if est_ac.estimand == Estimand::Conditional || est_bc.estimand == Estimand::Conditional {
        warnings.push(String::from(CONDITIONAL_WARNING));
    }
    let estimand = if warnings.is_empty() { Estimand::Marginal } else { Estimand::Conditional };
    let est = EffectEstimate::wald(est_ac.point - est_bc.point, est_ac.variance + est_bc.variance, estimand, est_ac.scale);
    Ok(est.with_diagnostics(Diagnostics { warnings, ..Diagnostics::default() }))
}
