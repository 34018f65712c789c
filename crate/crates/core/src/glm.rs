//! Generalized linear models fitted by iteratively reweighted least squares.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::IpdDataset;
use crate::error::{Error, Result};
use crate::numerics::matrix::{cholesky_solve, dot, Matrix};
use crate::numerics::{expit, logit};

/// Link function. The family follows from it: logit is Bernoulli,
/// identity is Gaussian with estimated dispersion, log is Poisson.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Identity,
    Log,
}

impl Link {
    #[inline]
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => expit(eta),
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }

    #[inline]
    pub fn apply(self, mu: f64) -> f64 {
        match self {
            Link::Logit => logit(mu),
            Link::Identity => mu,
            Link::Log => mu.ln(),
        }
    }

    #[inline]
    fn dmu_deta(self, mu: f64) -> f64 {
        match self {
            Link::Logit => mu * (1.0 - mu),
            Link::Identity => 1.0,
            Link::Log => mu,
        }
    }

    #[inline]
    fn variance(self, mu: f64) -> f64 {
        match self {
            Link::Logit => mu * (1.0 - mu),
            Link::Identity => 1.0,
            Link::Log => mu,
        }
    }

    fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        match self {
            Link::Logit => 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu))),
            Link::Identity => (y - mu) * (y - mu),
            Link::Log => 2.0 * (xlogy(y, y / mu) - (y - mu)),
        }
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 { 0.0 } else { x * y.ln() }
}

/// Structure of the outcome model's linear predictor.
///
/// Coefficients are laid out as `[intercept, prognostic.., treatment,
/// treatment x effect_modifiers..]`, the intercept and treatment blocks being
/// present only when enabled. `centering[j]` is subtracted from covariate
/// column `j` wherever it enters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub prognostic: Vec<usize>,
    pub effect_modifiers: Vec<usize>,
    pub treatment: bool,
    pub intercept: bool,
    pub centering: Option<Vec<f64>>,
    pub link: Link,
}

impl ModelSpec {
    /// All `k` covariates prognostic, `ems` also interacting with treatment.
    pub fn outcome_model(k: usize, ems: &[usize]) -> Self {
        ModelSpec {
            prognostic: (0..k).collect(),
            effect_modifiers: ems.to_vec(),
            treatment: true,
            intercept: true,
            centering: None,
            link: Link::Logit,
        }
    }

    /// `y ~ z`.
    pub fn treatment_only() -> Self {
        ModelSpec {
            prognostic: Vec::new(),
            effect_modifiers: Vec::new(),
            treatment: true,
            intercept: true,
            centering: None,
            link: Link::Logit,
        }
    }

    pub fn intercept_only() -> Self {
        ModelSpec { treatment: false, ..Self::treatment_only() }
    }

    pub fn with_centering(mut self, c: Vec<f64>) -> Self {
        self.centering = Some(c);
        self
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn width(&self) -> usize {
        self.intercept as usize
            + self.prognostic.len()
            + self.treatment as usize * (1 + self.effect_modifiers.len())
    }

    pub fn treatment_index(&self) -> Option<usize> {
        self.treatment.then(|| self.intercept as usize + self.prognostic.len())
    }

    /// Checks the spec against a covariate matrix with `k` columns.
    pub fn validate(&self, k: usize) -> Result<()> {
        if let Some(&j) = self.prognostic.iter().chain(&self.effect_modifiers).find(|&&j| j >= k) {
            return Err(Error::Shape(format!("column {j} referenced, data has {k}")));
        }
        if !self.treatment && !self.effect_modifiers.is_empty() {
            return Err(Error::Config("effect modifiers need a treatment term".into()));
        }
        if let Some(&j) = self.effect_modifiers.iter().find(|j| !self.prognostic.contains(j)) {
            return Err(Error::Config(format!("effect modifier {j} is not a prognostic term")));
        }
        if let Some(c) = &self.centering {
            if c.len() != k {
                return Err(Error::Shape(format!("centering vector of {} for {k} columns", c.len())));
            }
        }
        Ok(())
    }

    #[inline]
    fn centered(&self, row: &[f64], j: usize) -> f64 {
        match &self.centering {
            Some(c) => row[j] - c[j],
            None => row[j],
        }
    }

    /// Writes the design row for covariates `row` and treatment `z`.
    pub fn design_row(&self, row: &[f64], z: f64, out: &mut [f64]) {
        let mut p = 0;
        if self.intercept {
            out[0] = 1.0;
            p = 1;
        }
        for &j in &self.prognostic {
            out[p] = self.centered(row, j);
            p += 1;
        }
        if self.treatment {
            out[p] = z;
            p += 1;
            for &j in &self.effect_modifiers {
                out[p] = z * self.centered(row, j);
                p += 1;
            }
        }
    }

    pub fn design(&self, x: &Matrix, trt: &[u8]) -> Matrix {
        let w = self.width();
        let mut d = Matrix::zeros(x.rows(), w);
        for i in 0..x.rows() {
            self.design_row(x.row(i), trt[i] as f64, d.row_mut(i));
        }
        d
    }

    /// Linear predictor of one subject under coefficients `beta`.
    #[inline]
    pub fn linear_predictor(&self, beta: &[f64], row: &[f64], z: f64) -> f64 {
        let mut eta = 0.0;
        let mut p = 0;
        if self.intercept {
            eta += beta[0];
            p = 1;
        }
        for &j in &self.prognostic {
            eta += beta[p] * self.centered(row, j);
            p += 1;
        }
        if self.treatment {
            let mut tz = beta[p];
            p += 1;
            for &j in &self.effect_modifiers {
                tz += beta[p] * self.centered(row, j);
                p += 1;
            }
            eta += tz * z;
        }
        eta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub vcov: Matrix,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
}

impl GlmFit {
    pub fn treatment_effect(&self, spec: &ModelSpec) -> Option<(f64, f64)> {
        spec.treatment_index().map(|i| (self.coefficients[i], self.vcov[(i, i)]))
    }
}

pub const MAX_IRLS_ITER: usize = 100;
const DEVIANCE_RTOL: f64 = 1e-10;
/// Largest admissible logit-scale coefficient before separation is declared.
pub const SEPARATION_BOUND: f64 = 30.0;

pub fn fit_glm(spec: &ModelSpec, data: &IpdDataset, weights: Option<&[f64]>) -> Result<GlmFit> {
    spec.validate(data.k())?;
    let y: Vec<f64> = match spec.link {
        Link::Logit => data.binary_outcome()?.iter().map(|&v| v as f64).collect(),
        _ => return Err(Error::Config("continuous outcomes need fit_design".into())),
    };
    let design = spec.design(&data.x, &data.trt);
    fit_design(&design, &y, weights, spec.link)
}

/// IRLS on an explicit design matrix.
pub fn fit_design(x: &Matrix, y: &[f64], weights: Option<&[f64]>, link: Link) -> Result<GlmFit> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::Shape(format!("{n} design rows, {} outcomes", y.len())));
    }
    let unit = vec![1.0; n];
    let w = match weights {
        Some(w) if w.len() != n => return Err(Error::Shape(format!("{} weights for {n} rows", w.len()))),
        Some(w) if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) => {
            return Err(Error::Domain("weights must be finite and non-negative".into()))
        }
        Some(w) if !w.iter().any(|&v| v > 0.0) => return Err(Error::Domain("all weights are zero".into())),
        Some(w) => w,
        None => &unit[..],
    };
    if link == Link::Logit && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("logistic outcome outside [0, 1]".into()));
    }
    if p == 0 {
        return Err(Error::Rank("empty design".into()));
    }

    let mut mu: Vec<f64> = match link {
        Link::Logit => y.iter().zip(w).map(|(&y, &w)| (w * y + 0.5) / (w + 1.0)).collect(),
        Link::Identity => y.to_vec(),
        Link::Log => y.iter().map(|&y| y + 0.1).collect(),
    };
    let mut eta: Vec<f64> = mu.iter().map(|&m| link.apply(m)).collect();
    let mut dev = deviance(link, y, &mu, w);
    let mut beta: Vec<f64> = vec![0.0; p];
    let mut first = true;
    let mut converged = false;
    let mut iterations = 0;

    let mut xtwx = Matrix::zeros(p, p);
    let mut xtwz = vec![0.0; p];
    while iterations < MAX_IRLS_ITER {
        iterations += 1;
        xtwx.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        xtwz.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let d = link.dmu_deta(mu[i]);
            let wi = w[i] * d * d / link.variance(mu[i]);
            if !(wi > 0.0) {
                continue;
            }
            let zi = eta[i] + (y[i] - mu[i]) / d;
            let row = x.row(i);
            for a in 0..p {
                let wa = wi * row[a];
                xtwz[a] += wa * zi;
                for b in 0..=a {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        fill_upper(&mut xtwx);
        let chol = xtwx.cholesky().map_err(|_| Error::Rank("X'WX is singular".into()))?;
        let mut proposal = cholesky_solve(&chol, &xtwz);

        let mut new_dev = f64::NAN;
        for _ in 0..30 {
            eta = x.row_iter().map(|r| dot(r, &proposal)).collect();
            mu = eta.iter().map(|&e| clamp_mean(link, link.inverse(e))).collect();
            new_dev = deviance(link, y, &mu, w);
            if new_dev.is_finite() && (first || new_dev <= dev * (1.0 + 1e-12) + 1e-12) {
                break;
            }
            for (pr, b) in proposal.iter_mut().zip(&beta) {
                *pr = 0.5 * (*pr + b);
            }
        }
        if !new_dev.is_finite() {
            return Err(Error::NumericalFailure("deviance is not finite".into()));
        }
        first = false;
        // quasi-separation flattens the deviance while steps stay large
        let moved = proposal.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = 1.0 + proposal.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        beta = proposal;
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if change < DEVIANCE_RTOL && moved < 1e-6 * scale {
            converged = true;
            break;
        }
    }

    if link == Link::Logit {
        if let Some(b) = beta.iter().find(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation(format!("coefficient {b:.1} exceeds {SEPARATION_BOUND}")));
        }
        if !converged {
            return Err(Error::Separation(format!("IRLS did not converge in {MAX_IRLS_ITER} iterations")));
        }
    } else if !converged {
        return Err(Error::NumericalFailure(format!("IRLS did not converge in {MAX_IRLS_ITER} iterations")));
    }

    // information at the final coefficients
    xtwx.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let d = link.dmu_deta(mu[i]);
        let wi = w[i] * d * d / link.variance(mu[i]);
        let row = x.row(i);
        for a in 0..p {
            for b in 0..=a {
                xtwx[(a, b)] += wi * row[a] * row[b];
            }
        }
    }
    fill_upper(&mut xtwx);
    let mut vcov = xtwx.inverse_spd().map_err(|_| Error::Rank("information matrix is singular".into()))?;
    if link == Link::Identity {
        let used = w.iter().filter(|&&v| v > 0.0).count();
        if used <= p {
            return Err(Error::Rank("no residual degrees of freedom".into()));
        }
        let dispersion = dev / (used - p) as f64;
        vcov = vcov.scale(dispersion);
    }
    Ok(GlmFit { coefficients: beta, vcov, deviance: dev, converged, iterations, n })
}

fn clamp_mean(link: Link, mu: f64) -> f64 {
    match link {
        Link::Logit => mu.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
        _ => mu,
    }
}

fn deviance(link: Link, y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(mu).zip(w).map(|((&y, &m), &w)| if w == 0.0 { 0.0 } else { w * link.unit_deviance(y, m) }).sum()
}

fn fill_upper(m: &mut Matrix) {
    for a in 0..m.rows() {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Conditional means `g^{-1}(eta)` for every row of `newdata` with treatment
/// set to `set_treatment`.
pub fn predict_mean(fit: &GlmFit, spec: &ModelSpec, newdata: &Matrix, set_treatment: u8) -> Result<Vec<f64>> {
    predict_with(&fit.coefficients, spec, newdata, set_treatment)
}

pub fn predict_with(beta: &[f64], spec: &ModelSpec, newdata: &Matrix, set_treatment: u8) -> Result<Vec<f64>> {
    spec.validate(newdata.cols())?;
    if beta.len() != spec.width() {
        return Err(Error::Shape(format!("{} coefficients for a design of width {}", beta.len(), spec.width())));
    }
    let z = set_treatment as f64;
    Ok(newdata.row_iter().map(|r| spec.link.inverse(spec.linear_predictor(beta, r, z))).collect())
}
