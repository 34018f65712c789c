//! Adaptive random-walk Metropolis for logistic regression coefficients
//! under independent normal priors, with split R-hat and effective sample
//! size diagnostics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;

use crate::data::IpdDataset;
use crate::error::{Error, Result};
use crate::glm::{fit_design, Link, ModelSpec};
use crate::numerics::dist::{bernoulli, standard_normal};
use crate::numerics::matrix::{dot, Matrix};
use crate::numerics::rng::RngStream;
use crate::numerics::{expit, log1p_exp};

/// Independent normal priors centered at zero. Coefficient `j` gets scale
/// `coefficients / sd(predictor j)` unless the predictor is constant or the
/// data are empty, in which case the unscaled value is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub intercept: f64,
    pub coefficients: f64,
    pub autoscale: bool,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { intercept: 1.0, coefficients: 2.5, autoscale: true }
    }
}

impl PriorSpec {
    /// Prior standard deviation of every coefficient of `design`.
    pub fn scales(&self, design: &Matrix, has_intercept: bool) -> Result<Vec<f64>> {
        if !(self.intercept > 0.0 && self.coefficients > 0.0) {
            return Err(Error::Config("prior scales must be positive".into()));
        }
        let n = design.rows();
        Ok((0..design.cols())
            .map(|j| {
                if has_intercept && j == 0 {
                    return self.intercept;
                }
                if !self.autoscale || n < 2 {
                    return self.coefficients;
                }
                let col = design.col(j);
                let m = col.iter().sum::<f64>() / n as f64;
                let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt();
                if sd > 0.0 { self.coefficients / sd } else { self.coefficients }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub chains: usize,
    /// Iterations per chain, warmup included.
    pub iters: usize,
    pub warmup: usize,
    pub thin: usize,
    pub rhat_threshold: f64,
    /// Fail on a large R-hat rather than only reporting it.
    pub strict_rhat: bool,
    pub target_acceptance: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 2,
            iters: 4000,
            warmup: 2000,
            thin: 1,
            rhat_threshold: 1.1,
            strict_rhat: true,
            target_acceptance: 0.234,
        }
    }
}

impl McmcConfig {
    pub fn kept_per_chain(&self) -> usize {
        (self.iters - self.warmup) / self.thin
    }

    fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.thin == 0 || self.warmup >= self.iters || self.warmup < 4 {
            return Err(Error::Config(format!(
                "MCMC needs chains > 0, thin > 0 and 4 <= warmup < iters; got {} chains, {}/{} iterations, thin {}",
                self.chains, self.warmup, self.iters, self.thin
            )));
        }
        if self.kept_per_chain() < 4 {
            return Err(Error::Config("fewer than 4 retained draws per chain".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// `L x P`, chains stacked in order.
    pub draws: Matrix,
    pub chains: usize,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub acceptance: Vec<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.rows() == 0
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.draws.row_iter().map(|r| r[j]).sum::<f64>() / self.len() as f64
    }

    pub fn sd(&self, j: usize) -> f64 {
        let m = self.mean(j);
        let l = self.len() as f64;
        (self.draws.row_iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / (l - 1.0)).sqrt()
    }

    fn chain(&self, c: usize, j: usize) -> Vec<f64> {
        let per = self.len() / self.chains;
        (c * per..(c + 1) * per).map(|i| self.draws[(i, j)]).collect()
    }
}

struct LogPosterior<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    prior_prec: Vec<f64>,
}

impl LogPosterior<'_> {
    fn eval(&self, beta: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (r, &y) in self.x.row_iter().zip(self.y) {
            let eta = dot(r, beta);
            lp += y * eta - log1p_exp(eta);
        }
        lp - 0.5 * beta.iter().zip(&self.prior_prec).map(|(b, p)| b * b * p).sum::<f64>()
    }
}

/// Draws from the posterior of a logistic outcome model.
pub fn sample_glm_posterior(
    spec: &ModelSpec,
    data: &IpdDataset,
    prior: &PriorSpec,
    cfg: &McmcConfig,
    rng: &RngStream,
) -> Result<PosteriorDraws> {
    if spec.link != Link::Logit {
        return Err(Error::Config("the sampler supports the logit link only".into()));
    }
    spec.validate(data.k())?;
    let y: Vec<f64> = data.binary_outcome()?.iter().map(|&v| v as f64).collect();
    let design = spec.design(&data.x, &data.trt);
    sample_design_posterior(&design, &y, spec.intercept, prior, cfg, rng)
}

pub fn sample_design_posterior(
    design: &Matrix,
    y: &[f64],
    has_intercept: bool,
    prior: &PriorSpec,
    cfg: &McmcConfig,
    rng: &RngStream,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let p = design.cols();
    if p == 0 {
        return Err(Error::Config("no parameters to sample".into()));
    }
    let scales = prior.scales(design, has_intercept)?;
    let target = LogPosterior { x: design, y, prior_prec: scales.iter().map(|s| 1.0 / (s * s)).collect() };

    // The walk runs in coordinates whitened by the ML fit, beta = centre + L gamma,
    // or scaled by the prior when there is no usable fit. The target is unchanged.
    let (centre, frame) = match fit_design(design, y, None, Link::Logit) {
        Ok(f) if design.rows() > p => match f.vcov.cholesky() {
            Ok(l) => (f.coefficients, l),
            Err(_) => (vec![0.0; p], Matrix::diag(&scales)),
        },
        _ => (vec![0.0; p], Matrix::diag(&scales)),
    };
    let to_beta = |gamma: &[f64], beta: &mut [f64]| {
        for a in 0..p {
            beta[a] = centre[a] + (0..=a).map(|b| frame[(a, b)] * gamma[b]).sum::<f64>();
        }
    };

    let kept = cfg.kept_per_chain();
    let mut draws = Matrix::zeros(cfg.chains * kept, p);
    let mut acceptance = Vec::with_capacity(cfg.chains);
    for c in 0..cfg.chains {
        let mut r = rng.substream(c as u64);
        let mut beta = vec![0.0; p];
        let log_density = |gamma: &[f64]| {
            let mut b = vec![0.0; p];
            to_beta(gamma, &mut b);
            target.eval(&b)
        };
        let (chain, acc) = run_chain(&log_density, p, cfg, &mut r)?;
        for (i, gamma) in chain.iter().enumerate() {
            to_beta(gamma, &mut beta);
            draws.row_mut(c * kept + i).copy_from_slice(&beta);
        }
        acceptance.push(acc);
    }

    let mut out = PosteriorDraws { draws, chains: cfg.chains, rhat: Vec::new(), ess: Vec::new(), acceptance };
    let chains: Vec<Vec<Vec<f64>>> = (0..p).map(|j| (0..cfg.chains).map(|c| out.chain(c, j)).collect()).collect();
    out.rhat = chains.iter().map(|cs| split_rhat(cs)).collect();
    out.ess = chains.iter().map(|cs| effective_sample_size(cs)).collect();
    let worst = out.max_rhat();
    if cfg.strict_rhat && !(worst <= cfg.rhat_threshold) {
        return Err(Error::DiagnosticsFailed { rhat: worst, threshold: cfg.rhat_threshold });
    }
    Ok(out)
}

/// Adaptive random-walk Metropolis on `log_density`, started near the origin
/// with unit proposal scales.
fn run_chain(
    log_density: &dyn Fn(&[f64]) -> f64,
    p: usize,
    cfg: &McmcConfig,
    rng: &mut RngStream,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut state: Vec<f64> = (0..p).map(|_| standard_normal(rng)).collect();
    let mut lp = log_density(&state);
    if !lp.is_finite() {
        state = vec![0.0; p];
        lp = log_density(&state);
        if !lp.is_finite() {
            return Err(Error::NumericalFailure("log posterior not finite at the start".into()));
        }
    }

    let base = 2.38 * 2.38 / p as f64;
    // proposal Cholesky factor; starts diagonal
    let mut chol = Matrix::diag(&vec![base.sqrt(); p]);
    let mut log_lambda = 0.0f64;
    let windows = adaptation_windows(cfg.warmup);
    let mut next_window = 0;
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(cfg.warmup);
    let mut kept = Vec::with_capacity(cfg.kept_per_chain());
    let mut accepted = 0usize;
    let mut step = vec![0.0; p];
    let mut proposal = vec![0.0; p];
    let mut adapt_t = 0usize;

    for it in 0..cfg.iters {
        if let Some(&(_, end)) = windows.get(next_window) {
            if it == end {
                next_window += 1;
                // all slow-phase draws so far, not just the last window
                if let Some(l) = empirical_proposal(&history[windows[0].0..end], base) {
                    chol = l;
                    log_lambda = 0.0;
                    adapt_t = 0;
                }
            }
        }
        step.iter_mut().for_each(|v| *v = standard_normal(rng));
        let lam = log_lambda.exp();
        for a in 0..p {
            let mut s = 0.0;
            for b in 0..=a {
                s += chol[(a, b)] * step[b];
            }
            proposal[a] = state[a] + lam * s;
        }
        let lp_new = log_density(&proposal);
        let accept = lp_new.is_finite() && (lp_new >= lp || rng.uniform().ln() < lp_new - lp);
        if accept {
            state.copy_from_slice(&proposal);
            lp = lp_new;
        }
        if it < cfg.warmup {
            adapt_t += 1;
            let gain = 1.0 / (adapt_t as f64 + 10.0).powf(0.6);
            log_lambda += gain * (accept as u8 as f64 - cfg.target_acceptance);
            history.push(state.clone());
        } else {
            accepted += accept as usize;
            if (it - cfg.warmup) % cfg.thin == cfg.thin - 1 {
                kept.push(state.clone());
            }
        }
    }
    Ok((kept, accepted as f64 / (cfg.iters - cfg.warmup) as f64))
}

/// Warmup windows `[start, end)` whose draws re-estimate the proposal
/// covariance at `end`: an initial stretch under the diagonal proposal,
/// windows doubling from 25 iterations, and a final 15% that only tunes the
/// scale.
fn adaptation_windows(warmup: usize) -> Vec<(usize, usize)> {
    let init = if warmup >= 500 { 75 } else { warmup * 15 / 100 };
    let term = warmup * 15 / 100;
    let end = warmup - term;
    let mut out = Vec::new();
    let (mut start, mut len) = (init, 25);
    while start + len <= end {
        // a window that would leave less than twice its length is stretched to the end
        let stop = if start + 3 * len > end { end } else { start + len };
        out.push((start, stop));
        start = stop;
        len *= 2;
    }
    out
}

/// Scaled sample covariance of the slow-phase draws, shrunk toward the identity.
fn empirical_proposal(hist: &[Vec<f64>], base: f64) -> Option<Matrix> {
    let n = hist.len();
    let p = hist.first()?.len();
    if n <= p + 1 {
        return None;
    }
    let mean: Vec<f64> = (0..p).map(|j| hist.iter().map(|h| h[j]).sum::<f64>() / n as f64).collect();
    let mut cov = Matrix::zeros(p, p);
    for h in hist {
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] += (h[a] - mean[a]) * (h[b] - mean[b]);
            }
        }
    }
    let nf = n as f64;
    // pseudo-draws of the identity, the target covariance in whitened coordinates
    let n0 = 25.0 * p as f64;
    let shrink = nf / (nf + n0);
    let ridge = n0 / (nf + n0);
    let cov = Matrix::from_fn(p, p, |a, b| {
        base * (shrink * cov[(a, b)] / (nf - 1.0) + if a == b { ridge } else { 0.0 })
    });
    cov.cholesky().ok()
}

/// Gelman-Rubin potential scale reduction over whole chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 2 || chains.len() < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n as f64 * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (m - 1.0);
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return if b > 0.0 { f64::INFINITY } else { 1.0 };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// R-hat with each chain split into halves.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        halves.push(c[..h].to_vec());
        halves.push(c[c.len() - h..].to_vec());
    }
    gelman_rubin(&halves)
}

/// Multi-chain effective sample size with Geyer's initial positive sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let acov = |c: &[f64], mu: f64, lag: usize| -> f64 {
        (0..n - lag).map(|i| (c[i] - mu) * (c[i + lag] - mu)).sum::<f64>() / n as f64
    };
    let w: f64 = chains.iter().zip(&means).map(|(c, &mu)| acov(c, mu, 0) * n as f64 / (n as f64 - 1.0)).sum::<f64>()
        / m as f64;
    if !(w > 0.0) {
        return f64::NAN;
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    let rho = |lag: usize| -> f64 {
        let mean_acov = chains.iter().zip(&means).map(|(c, &mu)| acov(c, mu, lag)).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        // initial monotone sequence
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    // same floor on tau as Stan, which bounds ESS by total * log10(total)
    total / tau.max(1.0 / total.log10())
}

/// Binary outcomes drawn from the posterior predictive, one row per draw.
pub fn posterior_predict(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    newdata: &Matrix,
    set_treatment: u8,
    rng: &mut RngStream,
) -> Result<Vec<Vec<u8>>> {
    predict_rows(&draws.draws, spec, newdata, set_treatment, rng)
}

pub fn predict_rows(
    coefs: &Matrix,
    spec: &ModelSpec,
    newdata: &Matrix,
    set_treatment: u8,
    rng: &mut RngStream,
) -> Result<Vec<Vec<u8>>> {
    spec.validate(newdata.cols())?;
    if coefs.cols() != spec.width() {
        return Err(Error::Shape(format!("{} parameters for a design of width {}", coefs.cols(), spec.width())));
    }
    let z = set_treatment as f64;
    Ok(coefs
        .row_iter()
        .map(|beta| newdata.row_iter().map(|r| bernoulli(rng, expit(spec.linear_predictor(beta, r, z)))).collect())
        .collect())
}
