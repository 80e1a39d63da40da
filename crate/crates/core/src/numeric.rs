//! Small numerical helpers shared by the likelihood, prior and sampler code.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

pub use statrs::function::gamma::ln_gamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of the standard normal CDF; infinite at 0 and 1.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Halley step; the residual is taken in whichever tail keeps precision.
    let e = if x > 0.0 {
        (1.0 - p) - 0.5 * erfc(x / SQRT_2)
    } else {
        0.5 * erfc(-x / SQRT_2) - p
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// `Φ(upper) − Φ(lower)` without cancellation in either tail.
pub fn norm_interval(lower: f64, upper: f64) -> f64 {
    if upper <= lower {
        return 0.0;
    }
    if lower >= 0.0 {
        norm_cdf(-lower) - norm_cdf(-upper)
    } else {
        norm_cdf(upper) - norm_cdf(lower)
    }
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalize log-weights in place into probabilities. Returns the log of the
/// normalizing constant, or `None` when every weight is zero.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<(Vec<f64>, f64)> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return None;
    }
    let w = log_w.iter().map(|v| (v - lse).exp()).collect();
    Some((w, lse))
}

/// Log density of a Beta(a, b) distribution.
pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::NEG_INFINITY;
    }
    let norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let la = if a == 1.0 { 0.0 } else { (a - 1.0) * x.ln() };
    let lb = if b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - x).ln() };
    norm + la + lb
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped onto [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// Tanh-sinh rule on (0, 1): `(u, 1 − u, weight)` triples, with the
/// complement computed directly so nodes near 1 keep full precision.
pub fn tanh_sinh_unit(step: f64, range: f64) -> Vec<(f64, f64, f64)> {
    let n = (range / step).ceil() as i64;
    (-n..=n)
        .filter_map(|k| {
            let t = k as f64 * step;
            let q = 0.5 * PI * t.sinh();
            let u = 1.0 / (1.0 + (-2.0 * q).exp());
            let uc = 1.0 / (1.0 + (2.0 * q).exp());
            let w = step * 0.5 * PI * t.cosh() / (2.0 * q.cosh().powi(2));
            (u > 0.0 && uc > 0.0 && w > 0.0).then_some((u, uc, w))
        })
        .collect()
}

/// Weighted mean and variance.
pub fn weighted_moments(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Weighted quantile by the inverse empirical CDF.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let target = q * total;
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= target {
            return values[i];
        }
    }
    values[*idx.last().expect("non-empty")]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_round_trips_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.025, 0.3, 0.45, 0.5, 0.77, 0.975, 0.999, 1.0 - 1e-9] {
            let x = norm_quantile(p);
            assert_relative_eq!(norm_cdf(x), p, max_relative = 1e-12);
        }
        assert_eq!(norm_quantile(0.5), 0.0);
        assert_relative_eq!(norm_quantile(0.25), -0.674_489_750_196_081_7, epsilon = 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_on(61, -15.0, 5.0);
        let sum: f64 = w.iter().sum();
        assert_relative_eq!(sum, 20.0, epsilon = 1e-12);
        let cubic: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(3)).sum();
        assert_relative_eq!(cubic, (5f64.powi(4) - 15f64.powi(4)) / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn beta_density_values() {
        assert_relative_eq!(beta_ln_pdf(0.5, 1.5, 1.5).exp(), 4.0 / PI, epsilon = 1e-12);
        assert_relative_eq!(beta_ln_pdf(1.0, 1.5, 1.0).exp(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularities() {
        let rule = tanh_sinh_unit(1.0 / 24.0, 3.2);
        let total: f64 = rule.iter().map(|r| r.2).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        // ∫ -ln(1 - u) du = 1 and ∫ u^{-1/2} du = 2 over (0, 1).
        let log_sing: f64 = rule.iter().map(|&(_, uc, w)| -w * uc.ln()).sum();
        assert_relative_eq!(log_sing, 1.0, epsilon = 1e-9);
        let root: f64 = rule.iter().map(|&(u, _, w)| w / u.sqrt()).sum();
        assert_relative_eq!(root, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn interval_is_tail_accurate() {
        let p = norm_interval(9.0, 9.5);
        let direct = norm_cdf(-9.0) - norm_cdf(-9.5);
        assert_relative_eq!(p, direct, max_relative = 1e-12);
        assert!(p > 0.0);
        assert_eq!(norm_interval(1.0, 1.0), 0.0);
    }

    #[test]
    fn log_add_exp_bounds() {
        assert_eq!(log_add_exp(0.0, f64::NEG_INFINITY), 0.0);
        assert!(log_add_exp(-3.0, -50.0) >= -3.0);
        assert_relative_eq!(log_add_exp(1.0f64.ln(), 1.0f64.ln()), 2f64.ln(), epsilon = 1e-15);
    }
}
