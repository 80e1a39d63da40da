//! Independent, hierarchical and mixture priors over the EPP inputs.
//!
//! The independent prior puts a Uniform on `t0` and scaled Student t₂
//! marginals on everything else. The hierarchical prior couples the `K`
//! areas of one country coordinate by coordinate through an equicorrelated
//! multivariate t, and the mixture prior blends the two per coordinate with
//! weight `pi0[j]` on the independent part.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre_on, ln_gamma, log_add_exp, norm_interval, norm_quantile, tanh_sinh_unit};
use crate::params::{Theta, N_PARAMS, T0};

/// Location of each independent marginal (the `t0` entry is the midpoint of its Uniform).
pub const INDEPENDENT_LOCATION: [f64; N_PARAMS] = [1980.0, 20.0, 0.42, 0.46, 0.17, -0.68, -0.038, 0.14];
/// Scale of each t₂ marginal; `t0` is Uniform and its entry is unused.
pub const INDEPENDENT_SCALE: [f64; N_PARAMS] = [f64::NAN, 0.458, 0.081, 0.192, 0.091, 0.264, 0.009, 0.068];
pub const T0_BOUNDS: [f64; 2] = [1970.0, 1990.0];
pub const INDEPENDENT_DF: f64 = 2.0;

/// Mixture weights on the independent component, estimated from
/// fourteen high-quality countries.
pub const REFERENCE_PI0: [f64; N_PARAMS] = [0.278, 0.249, 0.315, 0.154, 0.490, 1.000, 0.196, 0.125];
/// Cross-area equicorrelations of the hierarchical component.
pub const REFERENCE_RHO0: [f64; N_PARAMS] = [0.822, 0.925, 0.996, 0.708, 0.783, 0.000, 0.529, 0.608];

const BOX_TANH_SINH_STEP: f64 = 1.0 / 24.0;
const BOX_TANH_SINH_RANGE: f64 = 3.2;

/// Log density of a location-scale Student t.
pub fn t_ln_pdf(x: f64, loc: f64, scale: f64, df: f64) -> f64 {
    let z = (x - loc) / scale;
    ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln() - scale.ln()
        - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
}

/// `log Γ(3/2) − log Γ(1) − ½ log(2π)`: the t₂ density at its center is `1/(2√2)`.
const LN_T2_NORM: f64 = -1.039_720_770_839_917_9;

#[inline]
fn t2_ln_pdf(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    LN_T2_NORM - scale.ln() - 1.5 * (0.5 * z * z).ln_1p()
}

/// The default independent prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct IndependentPrior;

impl IndependentPrior {
    pub fn marginal_ln_pdf(&self, j: usize, x: f64) -> f64 {
        if j == T0 {
            let [lo, hi] = T0_BOUNDS;
            return if (lo..=hi).contains(&x) { -(hi - lo).ln() } else { f64::NEG_INFINITY };
        }
        t2_ln_pdf(x, INDEPENDENT_LOCATION[j], INDEPENDENT_SCALE[j])
    }

    pub fn log_density(&self, theta: &Theta) -> f64 {
        theta
            .to_array()
            .iter()
            .enumerate()
            .map(|(j, &x)| self.marginal_ln_pdf(j, x))
            .sum()
    }

    pub fn sample_marginal<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> f64 {
        if j == T0 {
            let [lo, hi] = T0_BOUNDS;
            return rng.random_range(lo..hi);
        }
        let t: f64 = StudentT::new(INDEPENDENT_DF).expect("df > 0").sample(rng);
        INDEPENDENT_LOCATION[j] + INDEPENDENT_SCALE[j] * t
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        let mut v = [0.0; N_PARAMS];
        for (j, x) in v.iter_mut().enumerate() {
            *x = self.sample_marginal(j, rng);
        }
        Theta::from_array(v)
    }

    /// Spread of each marginal, used to scale distances in the sampler.
    /// `t0` uses the standard deviation of its Uniform.
    pub fn scales(&self) -> [f64; N_PARAMS] {
        let mut s = INDEPENDENT_SCALE;
        s[T0] = (T0_BOUNDS[1] - T0_BOUNDS[0]) / 12f64.sqrt();
        s
    }
}

pub fn independent_log_prior(theta: &Theta) -> f64 {
    IndependentPrior.log_density(theta)
}

pub fn sample_independent_prior<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<Theta> {
    (0..count).map(|_| IndependentPrior.sample(rng)).collect()
}

/// Equicorrelated multivariate t over the `K` areas of one coordinate:
/// location `mu·1`, scale matrix `sigma²[(1−rho)I + rho J]`.
#[derive(Debug, Clone)]
pub struct EquicorrelatedT {
    k: usize,
    mu: f64,
    sigma: f64,
    rho: f64,
    df: f64,
    log_norm: f64,
    /// Optional truncation box shared by every coordinate, with its log probability.
    bounds: Option<([f64; 2], f64)>,
}

impl EquicorrelatedT {
    pub fn new(k: usize, mu: f64, sigma: f64, rho: f64, df: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("need at least one area".into()));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!("equicorrelation {rho} outside [0, 1)")));
        }
        if !(sigma > 0.0 && df > 0.0) {
            return Err(Error::InvalidParameter("scale and df must be positive".into()));
        }
        let kf = k as f64;
        let log_det = 2.0 * kf * sigma.ln() + (kf - 1.0) * (1.0 - rho).ln() + (1.0 + (kf - 1.0) * rho).ln();
        let log_norm = ln_gamma(0.5 * (df + kf)) - ln_gamma(0.5 * df) - 0.5 * kf * (df * std::f64::consts::PI).ln()
            - 0.5 * log_det;
        Ok(EquicorrelatedT {
            k,
            mu,
            sigma,
            rho,
            df,
            log_norm,
            bounds: None,
        })
    }

    /// Restrict to the box `bounds^K`, renormalizing by its probability.
    pub fn truncated(mut self, bounds: [f64; 2]) -> Self {
        let log_p = self.log_box_probability(bounds);
        self.bounds = Some((bounds, log_p));
        self
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Mahalanobis form via Sherman–Morrison on the equicorrelated scale matrix.
    fn quad_form(&self, x: &[f64]) -> f64 {
        let (mut s, mut ss) = (0.0, 0.0);
        for &v in x {
            let z = (v - self.mu) / self.sigma;
            s += z;
            ss += z * z;
        }
        let shrink = self.rho / (1.0 + (self.k as f64 - 1.0) * self.rho);
        (ss - shrink * s * s) / (1.0 - self.rho)
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.k);
        let mut log_p = 0.0;
        if let Some(([lo, hi], log_box)) = self.bounds {
            if x.iter().any(|v| !(lo..=hi).contains(v)) {
                return f64::NEG_INFINITY;
            }
            log_p = log_box;
        }
        let q = self.quad_form(x);
        self.log_norm - 0.5 * (self.df + self.k as f64) * (q / self.df).ln_1p() - log_p
    }

    /// `log P(X ∈ bounds^K)` by quadrature over the shared factors.
    ///
    /// Writing `X_i = mu + sigma (√(1−rho) Z_i + √rho Z_0) / √(W/df)`, the
    /// coordinates are independent given `(Z_0, W)` so the box probability is
    /// `E[(Φ(u) − Φ(l))^K]`, a two-dimensional integral over the unit square
    /// (CDF scale for `W` and `Z_0`). The `W` tail gives an endpoint
    /// singularity, which the tanh-sinh rule absorbs.
    pub fn log_box_probability(&self, [lo, hi]: [f64; 2]) -> f64 {
        let chi = ChiSquared::new(self.df).expect("df > 0");
        let kf = self.k as f64;
        let a = (lo - self.mu) / self.sigma;
        let b = (hi - self.mu) / self.sigma;
        let sr = self.rho.sqrt();
        let sc = (1.0 - self.rho).sqrt();
        let rule = tanh_sinh_unit(BOX_TANH_SINH_STEP, BOX_TANH_SINH_RANGE);
        let w_nodes: Vec<f64> = rule
            .iter()
            .map(|&(u, uc, _)| {
                // Closed form for the default df = 2.
                let w = if self.df == 2.0 { -2.0 * uc.ln() } else { chi.inverse_cdf(u) };
                (w / self.df).sqrt()
            })
            .collect();
        let z_nodes: Vec<f64> =
            rule.iter().map(|&(u, uc, _)| if u < 0.5 { norm_quantile(u) } else { -norm_quantile(uc) }).collect();
        let mut logs = Vec::with_capacity(rule.len() * rule.len());
        for (&s, &(_, _, ws)) in w_nodes.iter().zip(&rule) {
            if !s.is_finite() || s <= 0.0 {
                continue;
            }
            for (&z0, &(_, _, wz)) in z_nodes.iter().zip(&rule) {
                if !z0.is_finite() {
                    continue;
                }
                let p = norm_interval((a * s - sr * z0) / sc, (b * s - sr * z0) / sc);
                logs.push(ws.ln() + wz.ln() + kf * p.ln());
            }
        }
        crate::numeric::log_sum_exp(&logs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self.bounds {
            None => Ok(self.sample_untruncated(rng)),
            Some((bounds, _)) => self.sample_in_box(bounds, rng),
        }
    }

    fn sample_untruncated<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let w: f64 = rand_distr::ChiSquared::new(self.df).expect("df > 0").sample(rng);
        let s = (w / self.df).sqrt();
        let z0: f64 = rng.sample(StandardNormal);
        (0..self.k)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                self.mu + self.sigma * ((1.0 - self.rho).sqrt() * z + self.rho.sqrt() * z0) / s
            })
            .collect()
    }

    /// Rejection from a uniform proposal on the box; the density peaks at `mu·1`.
    fn sample_in_box<R: Rng + ?Sized>(&self, [lo, hi]: [f64; 2], rng: &mut R) -> Result<Vec<f64>> {
        let center = vec![self.mu.clamp(lo, hi); self.k];
        let q_peak = if (lo..=hi).contains(&self.mu) { 0.0 } else { self.quad_form(&center) };
        let exponent = -0.5 * (self.df + self.k as f64);
        for _ in 0..10_000_000 {
            let x: Vec<f64> = (0..self.k).map(|_| rng.random_range(lo..hi)).collect();
            let log_accept = exponent * ((self.quad_form(&x) / self.df).ln_1p() - (q_peak / self.df).ln_1p());
            if rng.random::<f64>().ln() < log_accept {
                return Ok(x);
            }
        }
        Err(Error::InvalidParameter("truncated multivariate t sampler did not accept".into()))
    }
}

/// Log density of the equicorrelated multivariate t, optionally truncated to `bounds^K`.
pub fn mvt_log_density(
    x: &[f64],
    mu0: f64,
    sigma0: f64,
    rho0: f64,
    df: f64,
    bounds: Option<[f64; 2]>,
) -> Result<f64> {
    let mut d = EquicorrelatedT::new(x.len(), mu0, sigma0, rho0, df)?;
    if let Some(b) = bounds {
        d = d.truncated(b);
    }
    Ok(d.ln_pdf(x))
}

/// Variance of a t_df(loc, scale) truncated to `[lo, hi]`, by quadrature.
pub fn truncated_t_moments(loc: f64, scale: f64, df: f64, [lo, hi]: [f64; 2]) -> (f64, f64) {
    let (x, w) = gauss_legendre_on(200, lo, hi);
    let dens: Vec<f64> = x.iter().map(|&v| t_ln_pdf(v, loc, scale, df).exp()).collect();
    let mass: f64 = dens.iter().zip(&w).map(|(d, w)| d * w).sum();
    let mean = x.iter().zip(&dens).zip(&w).map(|((x, d), w)| x * d * w).sum::<f64>() / mass;
    let var = x
        .iter()
        .zip(&dens)
        .zip(&w)
        .map(|((x, d), w)| (x - mean).powi(2) * d * w)
        .sum::<f64>()
        / mass;
    (mean, var)
}

/// Scale of the truncated-t marginal for `t0` whose variance matches the Uniform.
///
/// A symmetric density decreasing away from the center always has less
/// variance than the Uniform on the same interval, so the match is only
/// reached as the scale grows. Bisection returns the smallest scale whose
/// variance is within `1e-6` of the Uniform's.
pub fn t0_hierarchical_scale(df: f64, bounds: [f64; 2]) -> f64 {
    let center = 0.5 * (bounds[0] + bounds[1]);
    let target = (bounds[1] - bounds[0]).powi(2) / 12.0 - 1e-6;
    let var_at = |log_s: f64| truncated_t_moments(center, log_s.exp(), df, bounds).1;
    let (mut lo, mut hi) = (0.0f64, 20.0f64);
    while var_at(hi) < target {
        hi *= 1.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if var_at(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    hi.exp()
}

/// Hyperparameters of the mixture prior, in canonical parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub mu0: [f64; N_PARAMS],
    pub sigma0: [f64; N_PARAMS],
    pub rho0: [f64; N_PARAMS],
    pub pi0: [f64; N_PARAMS],
    pub df: f64,
    pub t0_bounds: [f64; 2],
}

impl Hyper {
    /// Hierarchical locations and scales matching the independent marginals,
    /// with the given weights and correlations.
    pub fn with_weights(pi0: [f64; N_PARAMS], rho0: [f64; N_PARAMS]) -> Self {
        let mut sigma0 = INDEPENDENT_SCALE;
        sigma0[T0] = t0_hierarchical_scale(INDEPENDENT_DF, T0_BOUNDS);
        Hyper {
            mu0: INDEPENDENT_LOCATION,
            sigma0,
            rho0,
            pi0,
            df: INDEPENDENT_DF,
            t0_bounds: T0_BOUNDS,
        }
    }

    pub fn reference() -> Self {
        Self::with_weights(REFERENCE_PI0, REFERENCE_RHO0)
    }

    /// Mixture that is purely the independent prior.
    pub fn independent() -> Self {
        Self::with_weights([1.0; N_PARAMS], REFERENCE_RHO0)
    }

    pub fn is_independent(&self) -> bool {
        self.pi0.iter().all(|&p| p == 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..N_PARAMS {
            if !(self.sigma0[j] > 0.0) {
                return Err(Error::InvalidParameter(format!("sigma0[{j}] must be positive")));
            }
            if !(0.0..1.0).contains(&self.rho0[j]) {
                return Err(Error::InvalidParameter(format!("rho0[{j}] must lie in [0, 1)")));
            }
            if !(0.0..=1.0).contains(&self.pi0[j]) {
                return Err(Error::InvalidParameter(format!("pi0[{j}] must lie in [0, 1]")));
            }
            if !self.mu0[j].is_finite() {
                return Err(Error::InvalidParameter(format!("mu0[{j}] must be finite")));
            }
        }
        if !(self.df > 0.0) {
            return Err(Error::InvalidParameter("df must be positive".into()));
        }
        if !(self.t0_bounds[0] < self.t0_bounds[1]) {
            return Err(Error::InvalidParameter("t0_bounds must be increasing".into()));
        }
        Ok(())
    }

    pub fn log_lower_bound(&self) -> f64 {
        self.pi0.iter().map(|p| p.ln()).sum()
    }
}

impl Default for Hyper {
    fn default() -> Self {
        Self::reference()
    }
}

/// Mixture prior for a country of `K` areas, with per-coordinate
/// hierarchical components (and the `t0` box normalizer) fixed at construction.
#[derive(Debug, Clone)]
pub struct MixturePrior {
    hyper: Hyper,
    k: usize,
    components: Vec<EquicorrelatedT>,
}

impl MixturePrior {
    pub fn new(hyper: &Hyper, k: usize) -> Result<Self> {
        hyper.validate()?;
        let components = (0..N_PARAMS)
            .map(|j| {
                let d = EquicorrelatedT::new(k, hyper.mu0[j], hyper.sigma0[j], hyper.rho0[j], hyper.df)?;
                Ok(if j == T0 { d.truncated(hyper.t0_bounds) } else { d })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixturePrior {
            hyper: hyper.clone(),
            k,
            components,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn component(&self, j: usize) -> &EquicorrelatedT {
        &self.components[j]
    }

    /// `(log f0_j, log f1_j)` for one coordinate column across the areas.
    pub fn coordinate_terms(&self, j: usize, column: &[f64]) -> (f64, f64) {
        let f0 = if j == T0 {
            let [lo, hi] = self.hyper.t0_bounds;
            if column.iter().all(|v| (lo..=hi).contains(v)) {
                -(column.len() as f64) * (hi - lo).ln()
            } else {
                f64::NEG_INFINITY
            }
        } else {
            column.iter().map(|&x| IndependentPrior.marginal_ln_pdf(j, x)).sum()
        };
        (f0, self.components[j].ln_pdf(column))
    }

    /// `log g_j` for one coordinate column.
    pub fn coordinate_log_density(&self, j: usize, column: &[f64]) -> f64 {
        let (f0, f1) = self.coordinate_terms(j, column);
        let pi = self.hyper.pi0[j];
        log_add_exp(pi.ln() + f0, (1.0 - pi).ln() + f1)
    }

    fn column(thetas: &[Theta], j: usize) -> Vec<f64> {
        thetas.iter().map(|t| t.get(j)).collect()
    }

    pub fn log_density(&self, thetas: &[Theta]) -> f64 {
        assert_eq!(thetas.len(), self.k, "expected {} areas", self.k);
        (0..N_PARAMS)
            .map(|j| self.coordinate_log_density(j, &Self::column(thetas, j)))
            .sum()
    }

    /// `log g − log f0`, accumulated as `Σ_j log[π_j + (1−π_j) f1_j/f0_j]`,
    /// so each term is bounded below by `log π_j`.
    pub fn log_ratio(&self, thetas: &[Theta]) -> f64 {
        assert_eq!(thetas.len(), self.k, "expected {} areas", self.k);
        (0..N_PARAMS)
            .map(|j| {
                let pi = self.hyper.pi0[j];
                if pi == 1.0 {
                    return 0.0;
                }
                let (f0, f1) = self.coordinate_terms(j, &Self::column(thetas, j));
                log_add_exp(pi.ln(), (1.0 - pi).ln() + f1 - f0)
            })
            .sum()
    }

    /// Joint draw for all areas: per coordinate choose the independent
    /// component with probability `pi0[j]`, else the hierarchical one.
    #[allow(clippy::needless_range_loop)]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Theta>> {
        let mut values = vec![[0.0; N_PARAMS]; self.k];
        for j in 0..N_PARAMS {
            let column = if rng.random::<f64>() < self.hyper.pi0[j] {
                (0..self.k).map(|_| IndependentPrior.sample_marginal(j, rng)).collect()
            } else {
                self.components[j].sample(rng)?
            };
            for (area, v) in column.into_iter().enumerate() {
                values[area][j] = v;
            }
        }
        Ok(values.into_iter().map(Theta::from_array).collect())
    }
}

pub fn mixture_log_prior_joint(thetas: &[Theta], hyper: &Hyper) -> Result<f64> {
    Ok(MixturePrior::new(hyper, thetas.len())?.log_density(thetas))
}

pub fn prior_ratio_log(thetas: &[Theta], hyper: &Hyper) -> Result<f64> {
    Ok(MixturePrior::new(hyper, thetas.len())?.log_ratio(thetas))
}
