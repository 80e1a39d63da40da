//! Incremental mixture importance sampling.
//!
//! Start from prior draws, then repeatedly place a Gaussian at the current
//! highest-weight point, sized from its nearest neighbours, and recompute
//! weights against the growing defensive mixture
//! `(n_initial · prior + Σ n_per_iter · Gaussian_k) / total`.
//! Stops once a multinomial resample would be expected to contain enough
//! distinct points.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numeric::{log_add_exp, normalize_log_weights};
use crate::params::Theta;

/// Target distribution as prior × likelihood over a flat parameter vector.
pub trait Model: Sync {
    fn dim(&self) -> usize;
    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Normalized log prior density; it is also the initial sampling density.
    fn log_prior(&self, x: &[f64]) -> f64;
    fn log_likelihood(&self, x: &[f64]) -> f64;
    /// Per-coordinate spread used for neighbour distances and regularization.
    fn scales(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImisConfig {
    pub n_initial: usize,
    pub n_per_iter: usize,
    pub n_resample: usize,
    pub max_iter: usize,
    /// Stored samples must exceed this normalized weight.
    pub weight_floor: f64,
    /// Stop once the expected unique fraction of a resample reaches this.
    pub unique_target: f64,
    pub execution: Execution,
}

impl Default for ImisConfig {
    fn default() -> Self {
        ImisConfig {
            n_initial: 10_000,
            n_per_iter: 1_000,
            n_resample: 1_000,
            max_iter: 100,
            weight_floor: 1e-6,
            unique_target: 1.0 - (-1.0f64).exp(),
            execution: Execution::Parallel,
        }
    }
}

impl ImisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_initial == 0 || self.n_per_iter == 0 || self.n_resample == 0 {
            return Err(Error::InvalidParameter("sample counts must be positive".into()));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor < 1.0) {
            return Err(Error::InvalidParameter("weight_floor must lie in (0, 1)".into()));
        }
        if !(self.unique_target > 0.0) {
            return Err(Error::InvalidParameter("unique_target must be positive".into()));
        }
        Ok(())
    }
}

const COVARIANCE_INFLATION: f64 = 1.2;
const COVARIANCE_RIDGE: f64 = 1e-6;

/// Multivariate normal mixture component.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    center: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianComponent {
    pub fn new(center: &[f64], cov: DMatrix<f64>) -> Result<Self> {
        let d = center.len();
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("proposal covariance is not positive definite".into()))?
            .l();
        let log_det: f64 = (0..d).map(|i| chol[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok(GaussianComponent {
            center: DVector::from_column_slice(center),
            chol,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.center;
        match self.chol.solve_lower_triangular(&diff) {
            Some(z) => self.log_norm - 0.5 * z.norm_squared(),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z = DVector::from_iterator(self.center.len(), (0..self.center.len()).map(|_| rng.sample(StandardNormal)));
        (&self.center + &self.chol * z).iter().copied().collect()
    }
}

/// Output of one IMIS run, restricted to stored samples.
#[derive(Debug, Clone)]
pub struct ImisOutput {
    pub points: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    pub log_sampler: Vec<f64>,
    pub weights: Vec<f64>,
    /// Gaussian components added before stopping.
    pub iterations: usize,
    /// Draws made in total, including those below the storage threshold.
    pub n_total: usize,
    pub expected_unique_fraction: f64,
}

impl ImisOutput {
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Expected distinct count when drawing `n` times with replacement from `weights`.
pub fn expected_unique(weights: &[f64], n: usize) -> f64 {
    weights
        .iter()
        .map(|&w| if w <= 0.0 { 0.0 } else { -(n as f64 * (-w).ln_1p()).exp_m1() })
        .sum()
}

pub fn imis_fit<M: Model + ?Sized>(model: &M, config: &ImisConfig, rng: &mut dyn RngCore) -> Result<ImisOutput> {
    config.validate()?;
    let exec = config.execution;
    let scales = model.scales();
    let d = model.dim();

    let mut points: Vec<Vec<f64>> = (0..config.n_initial).map(|_| model.sample_prior(rng)).collect();
    let mut log_prior = exec.map(&points, |x| model.log_prior(x));
    let mut log_lik = eval_likelihood(model, &points, &log_prior, exec);
    let ln_initial = (config.n_initial as f64).ln();
    let ln_batch = (config.n_per_iter as f64).ln();
    // log of n_initial·prior(x) + Σ n_per_iter·φ_k(x), unnormalized by total count.
    let mut log_mix: Vec<f64> = log_prior.iter().map(|lp| ln_initial + lp).collect();
    let mut components: Vec<GaussianComponent> = Vec::new();

    let mut iterations = 0;
    loop {
        let n_total = points.len();
        let ln_total = (n_total as f64).ln();
        let log_w: Vec<f64> = (0..n_total)
            .map(|i| {
                let lt = log_prior[i] + log_lik[i];
                if lt == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    lt - (log_mix[i] - ln_total)
                }
            })
            .collect();
        let (weights, _) = normalize_log_weights(&log_w).ok_or(Error::NoSupport)?;
        let unique = expected_unique(&weights, config.n_resample) / config.n_resample as f64;
        log::debug!("imis iteration {iterations}: {n_total} draws, expected unique {unique:.3}");

        if unique >= config.unique_target || iterations >= config.max_iter {
            return Ok(store(
                points,
                &log_prior,
                &log_lik,
                &log_mix,
                ln_total,
                weights,
                config.weight_floor,
                iterations,
                unique,
            ));
        }

        let component = propose(&points, &weights, &scales, config.n_per_iter, d)?;
        let fresh: Vec<Vec<f64>> = (0..config.n_per_iter).map(|_| component.sample(rng)).collect();
        let fresh_prior = exec.map(&fresh, |x| model.log_prior(x));
        let fresh_lik = eval_likelihood(model, &fresh, &fresh_prior, exec);

        let old_terms = exec.map(&points, |x| component.ln_pdf(x));
        for (m, t) in log_mix.iter_mut().zip(old_terms) {
            *m = log_add_exp(*m, ln_batch + t);
        }
        components.push(component);
        let fresh_mix = exec.map(&fresh, |x| {
            let mut m = ln_initial + model.log_prior(x);
            for c in &components {
                m = log_add_exp(m, ln_batch + c.ln_pdf(x));
            }
            m
        });

        points.extend(fresh);
        log_prior.extend(fresh_prior);
        log_lik.extend(fresh_lik);
        log_mix.extend(fresh_mix);
        iterations += 1;
    }
}

fn eval_likelihood<M: Model + ?Sized>(model: &M, points: &[Vec<f64>], log_prior: &[f64], exec: Execution) -> Vec<f64> {
    exec.map_range(points.len(), |i| {
        if log_prior[i] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            let ll = model.log_likelihood(&points[i]);
            if ll.is_nan() {
                f64::NEG_INFINITY
            } else {
                ll
            }
        }
    })
}

/// Gaussian centred at the heaviest point with the weighted covariance of
/// its `n_neighbours` nearest neighbours (distance scaled by `scales`).
fn propose(points: &[Vec<f64>], weights: &[f64], scales: &[f64], n_neighbours: usize, d: usize) -> Result<GaussianComponent> {
    let best = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, &w)| if w > weights[best] { i } else { best });
    let center = &points[best];
    let dist = |x: &[f64]| -> f64 {
        x.iter()
            .zip(center)
            .zip(scales)
            .map(|((a, c), s)| ((a - c) / s).powi(2))
            .sum()
    };
    let mut order: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, x)| (dist(x), i)).collect();
    let b = n_neighbours.min(order.len());
    if b < order.len() {
        order.select_nth_unstable_by(b - 1, |a, c| a.0.total_cmp(&c.0).then(a.1.cmp(&c.1)));
        order.truncate(b);
    }
    order.sort_by_key(|&(_, i)| i);

    let uniform = 1.0 / points.len() as f64;
    let mix: Vec<f64> = order.iter().map(|&(_, i)| 0.5 * (weights[i] + uniform)).collect();
    let total: f64 = mix.iter().sum();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (&(_, i), w) in order.iter().zip(&mix) {
        let diff = DVector::from_iterator(d, points[i].iter().zip(center).map(|(a, c)| a - c));
        cov += (w / total) * &diff * diff.transpose();
    }
    cov *= COVARIANCE_INFLATION;
    let mut ridge = COVARIANCE_RIDGE;
    loop {
        let mut c = cov.clone();
        for (k, s) in scales.iter().enumerate() {
            c[(k, k)] += ridge * s * s;
        }
        match GaussianComponent::new(center, c) {
            Ok(g) => return Ok(g),
            Err(_) if ridge < 1.0 => ridge *= 10.0,
            Err(e) => return Err(e),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn store(
    points: Vec<Vec<f64>>,
    log_prior: &[f64],
    log_lik: &[f64],
    log_mix: &[f64],
    ln_total: f64,
    weights: Vec<f64>,
    floor: f64,
    iterations: usize,
    unique: f64,
) -> ImisOutput {
    let n_total = points.len();
    let keep: Vec<usize> = (0..n_total).filter(|&i| weights[i] > floor).collect();
    let kept_mass: f64 = keep.iter().map(|&i| weights[i]).sum();
    let mut out = ImisOutput {
        points: Vec::with_capacity(keep.len()),
        log_target: Vec::with_capacity(keep.len()),
        log_sampler: Vec::with_capacity(keep.len()),
        weights: Vec::with_capacity(keep.len()),
        iterations,
        n_total,
        expected_unique_fraction: unique,
    };
    let mut points = points;
    for &i in &keep {
        out.points.push(std::mem::take(&mut points[i]));
        out.log_target.push(log_prior[i] + log_lik[i]);
        out.log_sampler.push(log_mix[i] - ln_total);
        out.weights.push(weights[i] / kept_mass);
    }
    out
}

/// Posterior draws for one area from its independent fit.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub area_id: String,
    pub thetas: Vec<Theta>,
    pub log_target: Vec<f64>,
    pub log_sampler: Vec<f64>,
    pub weight: Vec<f64>,
}

impl WeightedSamples {
    /// Equal-weight samples, e.g. from an MCMC run.
    pub fn equal_weights(area_id: impl Into<String>, thetas: Vec<Theta>) -> Self {
        let n = thetas.len();
        WeightedSamples {
            area_id: area_id.into(),
            log_target: vec![f64::NAN; n],
            log_sampler: vec![f64::NAN; n],
            weight: vec![1.0 / n as f64; n],
            thetas,
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.thetas.len();
        if self.log_target.len() != n || self.log_sampler.len() != n || self.weight.len() != n {
            return Err(Error::Data(format!("area {}: sample columns differ in length", self.area_id)));
        }
        if self.weight.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Data(format!("area {}: negative or NaN weight", self.area_id)));
        }
        let total: f64 = self.weight.iter().sum();
        if n > 0 && (total - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("area {}: weights sum to {total}", self.area_id)));
        }
        Ok(())
    }

    pub fn weighted_mean(&self, f: impl Fn(&Theta) -> f64) -> f64 {
        self.thetas.iter().zip(&self.weight).map(|(t, w)| w * f(t)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub thetas: Vec<Theta>,
    pub indices: Vec<usize>,
    pub unique_count: usize,
}

pub fn resample(ws: &WeightedSamples, count: usize, rng: &mut dyn RngCore) -> Result<Resampled> {
    if count == 0 {
        return Err(Error::InvalidParameter("resample count must be positive".into()));
    }
    let dist = WeightedIndex::new(&ws.weight)
        .map_err(|e| Error::InvalidParameter(format!("area {}: {e}", ws.area_id)))?;
    let indices: Vec<usize> = (0..count).map(|_| dist.sample(rng)).collect();
    let mut distinct = indices.clone();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(Resampled {
        thetas: indices.iter().map(|&i| ws.thetas[i]).collect(),
        unique_count: distinct.len(),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Conjugate {
        prior_sd: f64,
        y: f64,
        flat: bool,
    }

    impl Model for Conjugate {
        fn dim(&self) -> usize {
            1
        }
        fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
            let z: f64 = rng.sample(StandardNormal);
            vec![self.prior_sd * z]
        }
        fn log_prior(&self, x: &[f64]) -> f64 {
            let z = x[0] / self.prior_sd;
            -0.5 * z * z - self.prior_sd.ln() - crate::numeric::LN_SQRT_2PI
        }
        fn log_likelihood(&self, x: &[f64]) -> f64 {
            if self.flat {
                0.0
            } else {
                -0.5 * (x[0] - self.y).powi(2)
            }
        }
        fn scales(&self) -> Vec<f64> {
            vec![self.prior_sd]
        }
    }

    #[test]
    fn flat_likelihood_stops_immediately() {
        let m = Conjugate { prior_sd: 10.0, y: 1.0, flat: true };
        let out = imis_fit(&m, &ImisConfig::default(), &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.iterations, 0);
        let w0 = 1.0 / out.weights.len() as f64;
        assert!(out.weights.iter().all(|w| (w - w0).abs() < 1e-9));
        assert_eq!(out.weights.len(), 10_000);
    }

    #[test]
    fn conjugate_mean() {
        // Prior sd 1000 against unit likelihood: prior draws alone are far too sparse.
        let m = Conjugate { prior_sd: 1000.0, y: 1.0, flat: false };
        let out = imis_fit(&m, &ImisConfig::default(), &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let mean: f64 = out.points.iter().zip(&out.weights).map(|(p, w)| p[0] * w).sum();
        let shrink: f64 = 1e6 / (1e6 + 1.0);
        let exact = shrink;
        let se = shrink.sqrt() / out.effective_sample_size().sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
        assert!(out.iterations > 0);
        let total: f64 = out.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_support_is_an_error() {
        struct Nothing;
        impl Model for Nothing {
            fn dim(&self) -> usize {
                1
            }
            fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
                vec![rng.random()]
            }
            fn log_prior(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn log_likelihood(&self, _: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
            fn scales(&self) -> Vec<f64> {
                vec![1.0]
            }
        }
        let cfg = ImisConfig { n_initial: 100, ..Default::default() };
        let err = imis_fit(&Nothing, &cfg, &mut ChaCha20Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::NoSupport));
        assert_eq!(err.to_string(), "posterior has no support under prior");
    }

    #[test]
    fn determinism_across_execution_modes() {
        let m = Conjugate { prior_sd: 10.0, y: 3.0, flat: false };
        let seq = ImisConfig { execution: Execution::Sequential, n_initial: 2000, n_per_iter: 200, ..Default::default() };
        let par = ImisConfig { execution: Execution::Parallel, ..seq };
        let a = imis_fit(&m, &seq, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let b = imis_fit(&m, &par, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.weights, b.weights);
    }

    fn ws(weights: Vec<f64>) -> WeightedSamples {
        let n = weights.len();
        WeightedSamples {
            area_id: "a".into(),
            thetas: (0..n).map(|i| Theta::from_array([1980.0 + i as f64 * 1e-3, 0., 0., 0., 0., 0., 0., 0.])).collect(),
            log_target: vec![0.0; n],
            log_sampler: vec![0.0; n],
            weight: weights,
        }
    }

    #[test]
    fn resample_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        assert_eq!(resample(&ws(vec![1.0]), 50, &mut rng).unwrap().unique_count, 1);
        assert_eq!(resample(&ws(vec![0.5, 0.5]), 1000, &mut rng).unwrap().unique_count, 2);
        let m = 100_000;
        let r = resample(&ws(vec![1.0 / m as f64; m]), 1000, &mut rng).unwrap();
        // Expected 1e5·(1 − (1 − 1e-5)^1000) ≈ 995.0 with sd ≈ 2.2.
        assert!((r.unique_count as f64 - 995.0).abs() < 10.0, "{}", r.unique_count);
        assert!(resample(&ws(vec![1.0]), 0, &mut rng).is_err());
    }

    #[test]
    fn expected_unique_formula() {
        let w = vec![1e-5; 100_000];
        let e = expected_unique(&w, 1000);
        assert!((e - 100_000.0 * (1.0 - (1.0f64 - 1e-5).powi(1000))).abs() < 1e-6);
    }
}
