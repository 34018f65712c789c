//! Distribution functions and samplers.

use alloc::format;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;
use rand::Rng;
use rand_distr::{Binomial, ChiSquared, Distribution, StandardNormal, StudentT};

use super::matrix::Matrix;
use super::rng::RngStream;
use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile: Wichura's AS241 followed by one Newton step.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_prob_open(p)?;
    let q = p - 0.5;
    let mut x = if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        q * poly(&AS241_A, r) / poly(&AS241_B, r)
    } else {
        let r = if q < 0.0 { p } else { 1.0 - p };
        let r = (-r.ln()).sqrt();
        let v = if r <= 5.0 {
            let r = r - 1.6;
            poly(&AS241_C, r) / poly(&AS241_D, r)
        } else {
            let r = r - 5.0;
            poly(&AS241_E, r) / poly(&AS241_F, r)
        };
        if q < 0.0 { -v } else { v }
    };
    let dens = normal_pdf(x);
    if dens > 0.0 {
        x -= (normal_cdf(x) - p) / dens;
    }
    Ok(x)
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_5, 133.141_667_891_784_38, 1_971.590_950_306_551_3, 13_731.693_765_509_461,
    45_921.953_931_549_87, 67_265.770_927_008_7, 33_430.575_583_588_13, 2_509.080_928_730_122_7,
];
const AS241_B: [f64; 8] = [
    1.0, 42.313_330_701_600_91, 687.187_007_492_057_9, 5_394.196_021_424_751,
    21_213.794_301_586_597, 39_307.895_800_092_71, 28_729.085_735_721_943, 5_226.495_278_852_545,
];
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_5, 4.630_337_846_156_546, 5.769_497_221_460_691, 3.647_848_324_763_204_5,
    1.270_458_252_452_368_4, 0.241_780_725_177_450_6, 0.022_723_844_989_269_184, 7.745_450_142_783_414e-4,
];
const AS241_D: [f64; 8] = [
    1.0, 2.053_191_626_637_759, 1.676_384_830_183_803_8, 0.689_767_334_985_1,
    0.148_103_976_427_480_08, 0.015_198_666_563_616_457, 5.475_938_084_995_345e-4, 1.050_750_071_644_416_9e-9,
];
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103, 5.463_784_911_164_114, 1.784_826_539_917_291_3, 0.296_560_571_828_504_9,
    0.026_532_189_526_576_124, 0.001_242_660_947_388_078_4, 2.711_555_568_743_487_6e-5, 2.010_334_399_292_288_1e-7,
];
const AS241_F: [f64; 8] = [
    1.0, 0.599_832_206_555_888, 0.136_929_880_922_735_8, 0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4, 1.846_318_317_510_054_8e-5, 1.421_511_758_316_446e-7, 2.044_263_103_389_939_7e-15,
];

fn check_prob_open(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {p} outside (0, 1)")))
    }
}

fn check_dof(nu: f64) -> Result<()> {
    if nu >= 1.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("degrees of freedom {nu} below 1")))
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() - x + a * x.ln() - libm::lgamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Upper tail `Q(a, x)` by Lentz's continued fraction, valid for `x >= a + 1`.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - libm::lgamma(a)).exp() * h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front).exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..3000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

pub fn chi_squared_cdf(x: f64, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    Ok(gamma_p(0.5 * nu, 0.5 * x))
}

pub fn chi_squared_pdf(x: f64, nu: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * nu;
    ((k - 1.0) * x.ln() - 0.5 * x - k * core::f64::consts::LN_2 - libm::lgamma(k)).exp()
}

pub fn chi_squared_quantile(p: f64, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    check_prob_open(p)?;
    // Wilson-Hilferty start
    let z = normal_quantile(p)?;
    let c = 2.0 / (9.0 * nu);
    let start = (nu * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);
    Ok(invert_monotone(
        |x| gamma_p(0.5 * nu, 0.5 * x),
        |x| chi_squared_pdf(x, nu),
        p,
        start,
        0.0,
        f64::INFINITY,
    ))
}

/// Quantile of the unit-scale gamma distribution with shape `a`.
pub fn gamma_quantile(p: f64, a: f64) -> Result<f64> {
    check_prob_open(p)?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("gamma shape {a}")));
    }
    let z = normal_quantile(p)?;
    let c = 1.0 / (9.0 * a);
    let start = (a * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);
    let ln_norm = libm::lgamma(a);
    Ok(invert_monotone(
        |x| gamma_p(a, x),
        |x| if x > 0.0 { ((a - 1.0) * x.ln() - x - ln_norm).exp() } else { 0.0 },
        p,
        start,
        0.0,
        f64::INFINITY,
    ))
}

pub fn t_cdf(x: f64, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    let tail = 0.5 * beta_inc(0.5 * nu, 0.5, nu / (nu + x * x));
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    let ln_c = libm::lgamma(0.5 * (nu + 1.0)) - libm::lgamma(0.5 * nu) - 0.5 * (nu * core::f64::consts::PI).ln();
    (ln_c - 0.5 * (nu + 1.0) * (1.0 + x * x / nu).ln()).exp()
}

pub fn t_quantile(p: f64, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    check_prob_open(p)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    let start = normal_quantile(p)?;
    Ok(invert_monotone(
        |x| {
            let tail = 0.5 * beta_inc(0.5 * nu, 0.5, nu / (nu + x * x));
            if x > 0.0 { 1.0 - tail } else { tail }
        },
        |x| t_pdf(x, nu),
        p,
        start,
        f64::NEG_INFINITY,
        f64::INFINITY,
    ))
}

/// Safeguarded Newton solve of `cdf(x) = p` for an increasing cdf.
pub(crate) fn invert_monotone(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    p: f64,
    start: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut x = start;
    for _ in 0..200 {
        let fx = cdf(x) - p;
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let mut next = if d > 0.0 { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => if lo > 0.0 { 2.0 * lo } else { lo + 1.0 },
                (false, true) => if hi < 0.0 { 2.0 * hi } else { hi - 1.0 },
                (false, false) => 0.0,
            };
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

pub fn standard_normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

pub fn chi_squared_sample(rng: &mut RngStream, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    let d = ChiSquared::new(nu).map_err(|e| Error::Domain(format!("{e}")))?;
    Ok(d.sample(rng))
}

pub fn student_t_sample(rng: &mut RngStream, nu: f64) -> Result<f64> {
    check_dof(nu)?;
    let d = StudentT::new(nu).map_err(|e| Error::Domain(format!("{e}")))?;
    Ok(d.sample(rng))
}

/// Bernoulli draw as `u < p`, so `p = 0` never fires and `p = 1` always does.
#[inline]
pub fn bernoulli(rng: &mut RngStream, p: f64) -> u8 {
    (rng.uniform() < p) as u8
}

pub fn binomial_sample(rng: &mut RngStream, n: u64, p: f64) -> Result<u64> {
    let d = Binomial::new(n, p).map_err(|e| Error::Domain(format!("{e}")))?;
    Ok(d.sample(rng))
}

/// `n` draws from `N(mean, cov)` as the rows of an `n x K` matrix.
pub fn mvn_sample(mean: &[f64], cov: &Matrix, n: usize, rng: &mut RngStream) -> Result<Matrix> {
    let k = mean.len();
    if cov.rows() != k || cov.cols() != k {
        return Err(Error::Shape(format!("mean of length {k} with a {}x{} covariance", cov.rows(), cov.cols())));
    }
    let l = cov.cholesky()?;
    let mut out = Matrix::zeros(n, k);
    let mut z = alloc::vec![0.0; k];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = standard_normal(rng));
        let row = out.row_mut(i);
        for a in 0..k {
            let mut s = mean[a];
            for b in 0..=a {
                s += l[(a, b)] * z[b];
            }
            row[a] = s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mean, sample_variance};
    use alloc::vec::Vec;

    #[test]
    fn normal_quantile_constants() {
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.2).is_err());
    }

    #[test]
    fn normal_cdf_known_values() {
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
    }

    #[test]
    fn quantiles_invert_cdfs() {
        let ps = [1e-6, 1e-4, 0.01, 0.1, 0.3, 0.5, 0.77, 0.95, 0.999, 1.0 - 1e-6];
        for &p in &ps {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() < 1e-9 * p.max(1e-3), "normal {p}");
            for nu in [1.0, 2.5, 5.0, 30.0, 999.0] {
                let c = chi_squared_quantile(p, nu).unwrap();
                assert!((chi_squared_cdf(c, nu).unwrap() - p).abs() < 1e-9, "chi2 {p} {nu}");
                let t = t_quantile(p, nu).unwrap();
                assert!((t_cdf(t, nu).unwrap() - p).abs() < 1e-9, "t {p} {nu}");
            }
        }
    }

    #[test]
    fn gamma_quantile_inverts() {
        for a in [0.3, 1.0, 2.25, 40.0] {
            for p in [1e-5, 0.2, 0.5, 0.9, 0.99999] {
                let x = gamma_quantile(p, a).unwrap();
                assert!((gamma_p(a, x) - p).abs() < 1e-9, "{a} {p}");
            }
        }
        // exponential: -ln(1 - p)
        assert!((gamma_quantile(0.5, 1.0).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reference_quantiles() {
        // chi-squared(5) 95th percentile and t(10) 97.5th percentile
        assert!((chi_squared_quantile(0.95, 5.0).unwrap() - 11.070_497_693_516_35).abs() < 1e-9);
        assert!((t_quantile(0.975, 10.0).unwrap() - 2.228_138_851_986_273).abs() < 1e-9);
        assert!((t_quantile(0.975, 1.0).unwrap() - 12.706_204_736_174_7).abs() < 1e-8);
    }

    #[test]
    fn bernoulli_edges() {
        let mut r = RngStream::new(3, 0);
        assert!((0..10_000).all(|_| bernoulli(&mut r, 0.0) == 0));
        assert!((0..10_000).all(|_| bernoulli(&mut r, 1.0) == 1));
    }

    #[test]
    fn chi_squared_sampler_mean() {
        let mut r = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| chi_squared_sample(&mut r, 5.0).unwrap()).collect();
        // sd of the mean is sqrt(10 / 1e6) ~ 0.0032
        assert!((mean(&xs) - 5.0).abs() < 0.01);
    }

    #[test]
    fn student_t_sampler_variance() {
        let mut r = RngStream::new(6, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| student_t_sample(&mut r, 10.0).unwrap()).collect();
        assert!(mean(&xs).abs() < 0.01);
        assert!((sample_variance(&xs) - 1.25).abs() < 0.03);
        assert!(student_t_sample(&mut r, 0.5).is_err());
    }

    #[test]
    fn mvn_degenerate_covariance() {
        let mut r = RngStream::new(1, 0);
        let x = mvn_sample(&[5.0, 5.0], &Matrix::identity(2).scale(1e-12), 100, &mut r).unwrap();
        assert!(x.as_slice().iter().all(|v| (v - 5.0).abs() < 1e-4));
    }

    #[test]
    fn mvn_standard_moments() {
        let mut r = RngStream::new(2, 0);
        let x = mvn_sample(&[0.0, 0.0, 0.0], &Matrix::identity(3), 100_000, &mut r).unwrap();
        for j in 0..3 {
            assert!(mean(&x.col(j)).abs() < 0.02);
        }
    }

    #[test]
    fn mvn_rejects_indefinite() {
        let mut r = RngStream::new(2, 0);
        let c = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert_eq!(mvn_sample(&[0.0, 0.0], &c, 5, &mut r), Err(Error::NotPosDef));
    }
}
