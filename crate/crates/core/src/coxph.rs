//! Cox proportional hazards by Newton-Raphson on the Breslow partial
//! likelihood, with the Breslow baseline cumulative hazard.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{IpdDataset, Outcome};
use crate::error::{Error, Result};
use crate::glm::ModelSpec;
use crate::numerics::matrix::{cholesky_solve, dot, Matrix};
use crate::numerics::{quantile_sorted, sorted_copy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    /// Same layout as the spec's design, which must have no intercept.
    pub coefficients: Vec<f64>,
    pub vcov: Matrix,
    /// `(event time, cumulative hazard)` at each distinct event time, ascending.
    pub baseline: Vec<(f64, f64)>,
    pub log_partial_likelihood: f64,
    pub iterations: usize,
}

impl CoxFit {
    pub fn last_event_time(&self) -> f64 {
        self.baseline.last().map_or(0.0, |b| b.0)
    }

    /// Baseline cumulative hazard at `t`, a right-continuous step function.
    pub fn cumulative_hazard(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("time {t}")));
        }
        let last = self.last_event_time();
        if t > last {
            return Err(Error::Extrapolation { t, last });
        }
        let k = self.baseline.partition_point(|&(s, _)| s <= t);
        Ok(if k == 0 { 0.0 } else { self.baseline[k - 1].1 })
    }
}

const MAX_NEWTON_ITER: usize = 50;
const COEF_BOUND: f64 = 30.0;

fn survival_parts(data: &IpdDataset) -> Result<(&[f64], &[u8])> {
    match &data.outcome {
        Outcome::Survival { time, event } => Ok((time, event)),
        Outcome::Binary(_) => Err(Error::Config("a survival outcome is required".into())),
    }
}

pub fn fit_cox(data: &IpdDataset, spec: &ModelSpec) -> Result<CoxFit> {
    if spec.intercept {
        return Err(Error::Config("a Cox model has no intercept".into()));
    }
    spec.validate(data.k())?;
    let (time, event) = survival_parts(data)?;
    if !event.iter().any(|&e| e == 1) {
        return Err(Error::Domain("no events".into()));
    }
    let x = spec.design(&data.x, &data.trt);
    let (n, p) = (x.rows(), x.cols());
    if p == 0 {
        return Err(Error::Config("empty Cox model".into()));
    }
    for j in 0..p {
        let first = x[(0, j)];
        if (0..n).all(|i| x[(i, j)] == first) {
            return Err(Error::Rank(format!("design column {j} is constant")));
        }
    }

    // descending time so risk sets grow as we walk
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));

    let mut beta = vec![0.0; p];
    let mut state = partial_likelihood(&x, time, event, &order, &beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_NEWTON_ITER {
        iterations += 1;
        let chol = state.info.cholesky().map_err(|_| Error::Rank("information matrix is singular".into()))?;
        let step = cholesky_solve(&chol, &state.score);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let st = partial_likelihood(&x, time, event, &order, &cand);
            if st.loglik.is_finite() && st.loglik >= state.loglik - 1e-12 * state.loglik.abs() {
                next = Some((cand, st));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, st)) = next else {
            return Err(Error::NumericalFailure("partial likelihood step failed".into()));
        };
        let change = (st.loglik - state.loglik).abs() / (st.loglik.abs() + 0.1);
        // a monotone likelihood flattens out while Newton steps stay large
        let moved = cand.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = cand;
        state = st;
        if beta.iter().any(|b| b.abs() > COEF_BOUND) {
            return Err(Error::Separation("monotone partial likelihood".into()));
        }
        if change < 1e-12 && moved < 1e-6 && dot(&state.score, &state.score).sqrt() < 1e-8 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Separation(format!("Newton iteration did not converge in {MAX_NEWTON_ITER} steps")));
    }
    let vcov = state.info.inverse_spd().map_err(|_| Error::Rank("information matrix is singular".into()))?;
    let baseline = breslow(&x, time, event, &order, &beta);
    Ok(CoxFit { coefficients: beta, vcov, baseline, log_partial_likelihood: state.loglik, iterations })
}

struct PlState {
    loglik: f64,
    score: Vec<f64>,
    info: Matrix,
}

/// Log partial likelihood, score and information with Breslow ties.
fn partial_likelihood(x: &Matrix, time: &[f64], event: &[u8], order: &[usize], beta: &[f64]) -> PlState {
    let p = beta.len();
    let eta: Vec<f64> = x.row_iter().map(|r| dot(r, beta)).collect();
    // shift for overflow safety; cancels in every ratio
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = Matrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = vec![0.0; p];
    let mut info = Matrix::zeros(p, p);

    let mut k = 0;
    while k < order.len() {
        let t = time[order[k]];
        let mut end = k;
        while end < order.len() && time[order[end]] == t {
            let i = order[end];
            let r = (eta[i] - shift).exp();
            let row = x.row(i);
            s0 += r;
            for a in 0..p {
                s1[a] += r * row[a];
                for b in 0..=a {
                    s2[(a, b)] += r * row[a] * row[b];
                }
            }
            end += 1;
        }
        for &i in &order[k..end] {
            if event[i] == 0 {
                continue;
            }
            let row = x.row(i);
            loglik += eta[i] - shift - s0.ln();
            for a in 0..p {
                let ma = s1[a] / s0;
                score[a] += row[a] - ma;
                for b in 0..=a {
                    info[(a, b)] += s2[(a, b)] / s0 - ma * s1[b] / s0;
                }
            }
        }
        k = end;
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    PlState { loglik, score, info }
}

fn breslow(x: &Matrix, time: &[f64], event: &[u8], order: &[usize], beta: &[f64]) -> Vec<(f64, f64)> {
    let risk: Vec<f64> = x.row_iter().map(|r| dot(r, beta).exp()).collect();
    let mut steps = Vec::new();
    let mut s0 = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = time[order[k]];
        let mut d = 0usize;
        while k < order.len() && time[order[k]] == t {
            s0 += risk[order[k]];
            d += event[order[k]] as usize;
            k += 1;
        }
        if d > 0 {
            steps.push((t, d as f64 / s0));
        }
    }
    steps.reverse();
    let mut h = 0.0;
    for s in &mut steps {
        h += s.1;
        s.1 = h;
    }
    steps
}

/// Average of `exp(-H0(t))^{exp(lp_i)}` over the rows of `x_star`.
pub fn marginal_survival(fit: &CoxFit, spec: &ModelSpec, x_star: &Matrix, set_treatment: u8, t: f64) -> Result<f64> {
    let h0 = fit.cumulative_hazard(t)?;
    survival_from_hazard(&fit.coefficients, spec, x_star, set_treatment, h0)
}

fn survival_from_hazard(beta: &[f64], spec: &ModelSpec, x_star: &Matrix, z: u8, h0: f64) -> Result<f64> {
    spec.validate(x_star.cols())?;
    if x_star.rows() == 0 {
        return Err(Error::Shape("empty covariate matrix".into()));
    }
    let z = z as f64;
    let total: f64 = x_star.row_iter().map(|r| (-h0 * spec.linear_predictor(beta, r, z).exp()).exp()).sum();
    Ok(total / x_star.rows() as f64)
}

/// `ln(-ln S1) - ln(-ln S0)` for marginal survival probabilities.
pub fn log_hr_from_survival(s1: f64, s0: f64, t: f64) -> Result<f64> {
    for s in [s1, s0] {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::UndefinedAtTime { t, survival: s });
        }
    }
    Ok((-s1.ln()).ln() - (-s0.ln()).ln())
}

pub fn marginal_log_hr(fit: &CoxFit, spec: &ModelSpec, x_star: &Matrix, t: f64) -> Result<f64> {
    let s1 = marginal_survival(fit, spec, x_star, 1, t)?;
    let s0 = marginal_survival(fit, spec, x_star, 0, t)?;
    log_hr_from_survival(s1, s0, t)
}

/// Marginal log hazard ratio over a time grid.
pub fn marginal_log_hr_series(fit: &CoxFit, spec: &ModelSpec, x_star: &Matrix, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter().map(|&t| marginal_log_hr(fit, spec, x_star, t).map(|v| (t, v))).collect()
}

/// Deciles (10%..90%) of the observed event times.
pub fn event_time_deciles(data: &IpdDataset) -> Result<Vec<f64>> {
    let (time, event) = survival_parts(data)?;
    let times: Vec<f64> = time.iter().zip(event).filter(|(_, &e)| e == 1).map(|(&t, _)| t).collect();
    if times.is_empty() {
        return Err(Error::Domain("no events".into()));
    }
    let sorted = sorted_copy(&times);
    Ok((1..10).map(|k| quantile_sorted(&sorted, k as f64 / 10.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    fn treatment_model() -> ModelSpec {
        ModelSpec { intercept: false, ..ModelSpec::treatment_only() }
    }

    fn exponential_arms(n: usize, rate1: f64, rate0: f64, seed: u64) -> IpdDataset {
        let mut rng = RngStream::new(seed, 0);
        let mut trt = Vec::new();
        let mut time = Vec::new();
        for z in [1u8, 0] {
            let rate = if z == 1 { rate1 } else { rate0 };
            for _ in 0..n {
                trt.push(z);
                time.push(-(1.0 - rng.uniform()).ln() / rate);
            }
        }
        let event = vec![1; time.len()];
        IpdDataset::survival(Matrix::zeros(time.len(), 0), trt, time, event).unwrap()
    }

    #[test]
    fn exponential_rate_ratio_recovered() {
        let d = exponential_arms(5000, 2.0, 1.0, 1);
        let spec = treatment_model();
        let fit = fit_cox(&d, &spec).unwrap();
        let se = fit.vcov[(0, 0)].sqrt();
        assert!((fit.coefficients[0] - 2f64.ln()).abs() < 0.06);
        assert!((fit.coefficients[0] - 2f64.ln()).abs() < 3.0 * se);
    }

    #[test]
    fn null_effect_within_three_se() {
        let d = exponential_arms(3000, 1.0, 1.0, 2);
        let fit = fit_cox(&d, &treatment_model()).unwrap();
        assert!(fit.coefficients[0].abs() < 3.0 * fit.vcov[(0, 0)].sqrt());
    }

    #[test]
    fn constant_covariate_is_rank_error() {
        let mut d = exponential_arms(50, 1.0, 1.0, 3);
        d.x = Matrix::from_fn(100, 1, |_, _| 2.0);
        d.names = crate::data::default_names(1);
        let spec = ModelSpec { intercept: false, ..ModelSpec::outcome_model(1, &[]) };
        assert!(matches!(fit_cox(&d, &spec), Err(Error::Rank(_))));
    }

    #[test]
    fn monotone_likelihood_is_separation() {
        // every treated subject fails before every control
        let trt: Vec<u8> = (0..40).map(|i| (i < 20) as u8).collect();
        let time: Vec<f64> = (0..40).map(|i| 1.0 + i as f64).collect();
        let d = IpdDataset::survival(Matrix::zeros(40, 0), trt, time, vec![1; 40]).unwrap();
        let r = fit_cox(&d, &treatment_model());
        assert!(matches!(r, Err(Error::Separation(_))), "{r:?}");
    }

    #[test]
    fn breslow_without_covariates_is_nelson_aalen() {
        let time = [1.0, 2.0, 2.0, 3.0, 4.0];
        let event = [1u8, 1, 0, 1, 0];
        let trt = vec![1, 0, 1, 0, 1];
        let d = IpdDataset::survival(Matrix::zeros(5, 0), trt, time.to_vec(), event.to_vec()).unwrap();
        let x = Matrix::zeros(5, 0);
        let order = [4usize, 3, 1, 2, 0];
        let base = breslow(&x, &time, &event, &order, &[]);
        assert_eq!(base.len(), 3);
        assert!((base[0].1 - 1.0 / 5.0).abs() < 1e-15);
        assert!((base[1].1 - (0.2 + 1.0 / 4.0)).abs() < 1e-15);
        assert!((base[2].1 - (0.45 + 1.0 / 2.0)).abs() < 1e-15);
        let _ = d;
    }

    #[test]
    fn hazard_is_stepwise_and_bounded() {
        let d = exponential_arms(200, 1.5, 1.0, 4);
        let fit = fit_cox(&d, &treatment_model()).unwrap();
        assert_eq!(fit.cumulative_hazard(0.0).unwrap(), 0.0);
        assert!(fit.baseline.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        let last = fit.last_event_time();
        assert!(matches!(fit.cumulative_hazard(last + 1.0), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn survival_by_hand() {
        let spec = ModelSpec { intercept: false, ..ModelSpec::outcome_model(1, &[]) };
        let x = Matrix::from_rows(&[[0.0], [2f64.ln()]]).unwrap();
        let s = survival_from_hazard(&[1.0, 0.0], &spec, &x, 0, 0.5).unwrap();
        assert!((s - ((-0.5f64).exp() + (-1.0f64).exp()) / 2.0).abs() < 1e-15);
        assert!((s - 0.487205).abs() < 1e-6);
        assert_eq!(survival_from_hazard(&[1.0, 0.0], &spec, &x, 1, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn log_hr_from_survival_by_hand() {
        let v = log_hr_from_survival((-1.0f64).exp(), (-2.0f64).exp(), 1.0).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
        assert!(matches!(log_hr_from_survival(1.0, 0.5, 0.1), Err(Error::UndefinedAtTime { .. })));
        assert!(matches!(log_hr_from_survival(0.5, 0.0, 0.1), Err(Error::UndefinedAtTime { .. })));
    }

    #[test]
    fn treatment_only_marginal_equals_coefficient() {
        let d = exponential_arms(300, 2.0, 1.0, 5);
        let spec = treatment_model();
        let fit = fit_cox(&d, &spec).unwrap();
        let x_star = Matrix::zeros(10, 0);
        for t in event_time_deciles(&d).unwrap() {
            let v = marginal_log_hr(&fit, &spec, &x_star, t).unwrap();
            assert!((v - fit.coefficients[0]).abs() < 1e-10);
        }
        assert!(matches!(marginal_log_hr(&fit, &spec, &x_star, 0.0), Err(Error::UndefinedAtTime { .. })));
    }
}
