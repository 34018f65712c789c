//! Synthesis of the target pseudo-population from marginal summaries and a
//! dependence structure.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{AggregateData, IpdDataset};
use crate::error::{Error, Result};
use crate::glm::Link;
use crate::numerics::dist::{self, normal_cdf, normal_quantile};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::RngStream;

pub const DEFAULT_N_STAR: usize = 1000;

/// Marginal distribution of one covariate. Means and SDs are on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    LogNormal { mean: f64, sd: f64 },
    Gamma { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    /// Normal with parent `mean`/`sd`, restricted to `[lower, upper]`.
    TruncatedNormal { mean: f64, sd: f64, lower: f64, upper: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            Marginal::Normal { mean, sd } if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() => {
                bad(format!("normal sd {sd}"))
            }
            Marginal::LogNormal { mean, sd } | Marginal::Gamma { mean, sd }
                if !(mean > 0.0 && sd > 0.0) || !mean.is_finite() || !sd.is_finite() =>
            {
                bad(format!("positive family needs mean > 0 and sd > 0, got {mean}, {sd}"))
            }
            Marginal::Bernoulli { p } if !(p > 0.0 && p < 1.0) => bad(format!("proportion {p} outside (0, 1)")),
            Marginal::TruncatedNormal { sd, lower, upper, .. } if !(sd > 0.0) || !(lower < upper) => {
                bad(format!("truncated normal sd {sd} bounds [{lower}, {upper}]"))
            }
            _ => Ok(()),
        }
    }

    /// Value at standard-normal latent `z`.
    pub fn from_latent(&self, z: f64) -> Result<f64> {
        Ok(match *self {
            Marginal::Normal { mean, sd } => mean + sd * z,
            Marginal::LogNormal { mean, sd } => {
                let s2 = (1.0 + (sd / mean).powi(2)).ln();
                (mean.ln() - 0.5 * s2 + s2.sqrt() * z).exp()
            }
            Marginal::Gamma { mean, sd } => {
                let shape = (mean / sd).powi(2);
                let scale = sd * sd / mean;
                scale * dist::gamma_quantile(latent_uniform(z), shape)?
            }
            Marginal::Bernoulli { p } => (normal_cdf(z) > 1.0 - p) as u8 as f64,
            Marginal::TruncatedNormal { mean, sd, lower, upper } => {
                let a = normal_cdf((lower - mean) / sd);
                let b = normal_cdf((upper - mean) / sd);
                let u = (a + normal_cdf(z) * (b - a)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                (mean + sd * normal_quantile(u)?).clamp(lower, upper)
            }
        })
    }
}

fn latent_uniform(z: f64) -> f64 {
    normal_cdf(z).clamp(1e-300, 1.0 - f64::EPSILON / 2.0)
}

/// Marginals plus the latent Gaussian correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub marginals: Vec<Marginal>,
    /// Rows of the correlation matrix.
    pub correlation: Vec<Vec<f64>>,
    pub n_star: usize,
}

impl PopulationSpec {
    /// Normal marginals at the published means and SDs.
    pub fn from_aggregate(ald: &AggregateData, correlation: &Matrix, n_star: usize) -> Self {
        let marginals = ald.means.iter().zip(&ald.sds).map(|(&mean, &sd)| Marginal::Normal { mean, sd }).collect();
        let correlation = correlation.row_iter().map(|r| r.to_vec()).collect();
        PopulationSpec { marginals, correlation, n_star }
    }

    pub fn correlation_matrix(&self) -> Result<Matrix> {
        Matrix::from_rows(&self.correlation)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.marginals.len();
        if k == 0 || self.n_star == 0 {
            return Err(Error::Config("population needs covariates and N* > 0".into()));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        let rho = self.correlation_matrix()?;
        if rho.rows() != k || rho.cols() != k {
            return Err(Error::Shape(format!("{k} marginals, {}x{} correlation", rho.rows(), rho.cols())));
        }
        if (0..k).any(|i| (rho[(i, i)] - 1.0).abs() > 1e-12) || !rho.is_symmetric(1e-12) {
            return Err(Error::Config("correlation must be symmetric with unit diagonal".into()));
        }
        Ok(())
    }
}

/// Pearson correlation matrix of the covariate columns.
pub fn infer_correlation(ipd: &IpdDataset) -> Result<Matrix> {
    correlation_of(&ipd.x)
}

pub fn correlation_of(x: &Matrix) -> Result<Matrix> {
    let (n, k) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::Domain("correlation needs at least two rows".into()));
    }
    let means: Vec<f64> = (0..k).map(|j| x.row_iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cross = Matrix::zeros(k, k);
    for r in x.row_iter() {
        for a in 0..k {
            let da = r[a] - means[a];
            for b in 0..=a {
                cross[(a, b)] += da * (r[b] - means[b]);
            }
        }
    }
    for j in 0..k {
        if !(cross[(j, j)] > 0.0) {
            return Err(Error::DegenerateCovariate(j));
        }
    }
    Ok(Matrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else {
            let (i, j) = if a > b { (a, b) } else { (b, a) };
            cross[(i, j)] / (cross[(i, i)] * cross[(j, j)]).sqrt()
        }
    }))
}

/// Gaussian-copula draw of `N*` covariate profiles.
pub fn synthesize_copula(spec: &PopulationSpec, rng: &mut RngStream) -> Result<Matrix> {
    spec.validate()?;
    let k = spec.marginals.len();
    let z = dist::mvn_sample(&vec![0.0; k], &spec.correlation_matrix()?, spec.n_star, rng)?;
    let mut out = Matrix::zeros(spec.n_star, k);
    for i in 0..spec.n_star {
        for (j, m) in spec.marginals.iter().enumerate() {
            out[(i, j)] = m.from_latent(z[(i, j)])?;
        }
    }
    Ok(out)
}

/// A regression term `coef * (x[parent] - center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub parent: usize,
    pub coef: f64,
    #[serde(default)]
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ConditionalFamily {
    Normal { sd: f64 },
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Marginal { marginal: Marginal },
    Conditional { family: ConditionalFamily, link: Link, intercept: f64, terms: Vec<Term> },
}

/// Joint distribution written as a product of a marginal and conditionals,
/// each node depending only on earlier nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedChain {
    pub nodes: Vec<Node>,
}

impl FactorizedChain {
    pub fn validate(&self) -> Result<()> {
        for (k, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Marginal { marginal } => marginal.validate()?,
                Node::Conditional { family, terms, .. } => {
                    if let Some(t) = terms.iter().find(|t| t.parent >= k) {
                        return Err(Error::Config(format!("node {k} depends on later node {}", t.parent)));
                    }
                    if let ConditionalFamily::Normal { sd } = family {
                        if !(*sd > 0.0) {
                            return Err(Error::Config(format!("node {k} has sd {sd}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn synthesize_factorized(chain: &FactorizedChain, n: usize, rng: &mut RngStream) -> Result<Matrix> {
    chain.validate()?;
    let k = chain.nodes.len();
    let mut out = Matrix::zeros(n, k);
    for i in 0..n {
        for (j, node) in chain.nodes.iter().enumerate() {
            let v = match node {
                Node::Marginal { marginal } => marginal.from_latent(dist::standard_normal(rng))?,
                Node::Conditional { family, link, intercept, terms } => {
                    let row = out.row(i);
                    let eta = intercept + terms.iter().map(|t| t.coef * (row[t.parent] - t.center)).sum::<f64>();
                    let mean = link.inverse(eta);
                    match family {
                        ConditionalFamily::Normal { sd } => mean + sd * dist::standard_normal(rng),
                        ConditionalFamily::Bernoulli => {
                            if !(mean > 0.0 && mean < 1.0) {
                                return Err(Error::Domain(format!("node {j} Bernoulli mean {mean}")));
                            }
                            dist::bernoulli(rng, mean) as f64
                        }
                    }
                }
            };
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{expit, mean, sample_variance};

    fn equicorrelated(k: usize, r: f64) -> Vec<Vec<f64>> {
        (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { r }).collect()).collect()
    }

    #[test]
    fn duplicated_column_has_unit_correlation() {
        let x = Matrix::from_fn(50, 2, |i, _| (i as f64).sin());
        let c = correlation_of(&x).unwrap();
        assert!((c[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x = Matrix::from_fn(10, 3, |i, j| if j == 1 { 4.0 } else { i as f64 });
        assert_eq!(correlation_of(&x), Err(Error::DegenerateCovariate(1)));
    }

    #[test]
    fn normal_copula_means() {
        let spec = PopulationSpec {
            marginals: vec![Marginal::Normal { mean: 0.6, sd: 0.4 }; 4],
            correlation: equicorrelated(4, 0.2),
            n_star: 100_000,
        };
        let x = synthesize_copula(&spec, &mut RngStream::new(1, 0)).unwrap();
        for j in 0..4 {
            assert!((mean(&x.col(j)) - 0.6).abs() < 0.005);
        }
        let c = correlation_of(&x).unwrap();
        assert!((c[(0, 3)] - 0.2).abs() < 0.01);
    }

    #[test]
    fn marginal_families_have_requested_moments() {
        let spec = PopulationSpec {
            marginals: vec![
                Marginal::LogNormal { mean: 2.0, sd: 0.5 },
                Marginal::Gamma { mean: 3.0, sd: 1.5 },
                Marginal::Bernoulli { p: 0.3 },
                Marginal::TruncatedNormal { mean: 0.0, sd: 1.0, lower: -0.5, upper: 2.0 },
            ],
            correlation: equicorrelated(4, 0.3),
            n_star: 100_000,
        };
        let x = synthesize_copula(&spec, &mut RngStream::new(2, 0)).unwrap();
        let (c0, c1, c2, c3) = (x.col(0), x.col(1), x.col(2), x.col(3));
        assert!((mean(&c0) - 2.0).abs() < 0.01 && (sample_variance(&c0).sqrt() - 0.5).abs() < 0.01);
        assert!((mean(&c1) - 3.0).abs() < 0.02 && (sample_variance(&c1).sqrt() - 1.5).abs() < 0.02);
        assert!((mean(&c2) - 0.3).abs() < 0.005);
        assert!(c2.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(c3.iter().all(|&v| (-0.5..=2.0).contains(&v)));
        // truncated standard normal mean: (phi(a) - phi(b)) / (Phi(b) - Phi(a))
        let (a, b) = (-0.5, 2.0);
        let tm = (dist::normal_pdf(a) - dist::normal_pdf(b)) / (normal_cdf(b) - normal_cdf(a));
        assert!((mean(&c3) - tm).abs() < 0.01);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = PopulationSpec {
            marginals: vec![Marginal::Bernoulli { p: 1.0 }],
            correlation: vec![vec![1.0]],
            n_star: 10,
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        spec.marginals = vec![Marginal::Normal { mean: 0.0, sd: 1.0 }; 2];
        spec.correlation = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert_eq!(synthesize_copula(&spec, &mut RngStream::new(0, 0)), Err(Error::NotPosDef));
    }

    #[test]
    fn chain_with_centered_logistic_node() {
        let chain = FactorizedChain {
            nodes: vec![
                Node::Marginal { marginal: Marginal::Normal { mean: 50.0, sd: 10.0 } },
                Node::Conditional {
                    family: ConditionalFamily::Bernoulli,
                    link: Link::Logit,
                    intercept: 0.0,
                    terms: vec![Term { parent: 0, coef: 0.1, center: 50.0 }],
                },
            ],
        };
        let x = synthesize_factorized(&chain, 100_000, &mut RngStream::new(3, 0)).unwrap();
        assert!((mean(&x.col(1)) - 0.5).abs() < 0.01);
    }

    #[test]
    fn zero_coefficient_chain_is_independent() {
        let chain = FactorizedChain {
            nodes: vec![
                Node::Marginal { marginal: Marginal::Bernoulli { p: 0.4 } },
                Node::Conditional {
                    family: ConditionalFamily::Bernoulli,
                    link: Link::Logit,
                    intercept: 0.8,
                    terms: vec![Term { parent: 0, coef: 0.0, center: 0.0 }],
                },
            ],
        };
        let x = synthesize_factorized(&chain, 100_000, &mut RngStream::new(4, 0)).unwrap();
        assert!((mean(&x.col(1)) - expit(0.8)).abs() < 0.01);
        assert!(correlation_of(&x).unwrap()[(0, 1)].abs() < 0.01);
    }

    #[test]
    fn chain_rejects_forward_reference_and_bad_mean() {
        let bad = FactorizedChain {
            nodes: vec![Node::Conditional {
                family: ConditionalFamily::Bernoulli,
                link: Link::Logit,
                intercept: 0.0,
                terms: vec![Term { parent: 0, coef: 1.0, center: 0.0 }],
            }],
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let identity = FactorizedChain {
            nodes: vec![
                Node::Marginal { marginal: Marginal::Normal { mean: 0.0, sd: 1.0 } },
                Node::Conditional {
                    family: ConditionalFamily::Bernoulli,
                    link: Link::Identity,
                    intercept: 0.5,
                    terms: vec![Term { parent: 0, coef: 1.0, center: 0.0 }],
                },
            ],
        };
        let r = synthesize_factorized(&identity, 1000, &mut RngStream::new(5, 0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
