//! Dense linear algebra, optimization, distributions and seeded random streams.

pub mod dist;
pub mod matrix;
pub mod optim;
pub mod rng;

#[allow(unused_imports)] // inherent when std is linked anywhere in the build
use num_traits::Float;

/// Inverse logit.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Empirical quantile, linear interpolation between order statistics
/// (type 7). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed 95% interval of a sample.
pub fn percentile_interval(xs: &[f64]) -> (f64, f64) {
    let s = sorted_copy(xs);
    (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975))
}

pub(crate) fn sorted_copy(xs: &[f64]) -> alloc::vec::Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}
