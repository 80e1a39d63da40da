//! Likelihood of antenatal-clinic and survey prevalence data given a projection.
//!
//! Clinic observations are modelled on the probit scale as
//! `W_it = Φ⁻¹(ρ_t) + β₄ + b_i + ε_it` with `b_i ~ N(0, σ²)` and
//! `ε_it ~ N(0, ν_it)`. For fixed σ² each clinic's residual vector is Gaussian
//! with covariance `diag(ν) + σ²·J`, handled in closed form; σ² itself is
//! integrated out by Gauss–Legendre quadrature on `log σ²`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Projection;
use crate::numeric::{gauss_legendre_on, ln_gamma, log_sum_exp, norm_pdf, norm_quantile, LN_SQRT_2PI};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AncObservation {
    pub clinic_id: String,
    pub year: i32,
    /// Number testing positive.
    pub y: u64,
    /// Number tested.
    pub n: u64,
}

impl AncObservation {
    /// Continuity-corrected prevalence `(y + 0.5) / (n + 1)`.
    pub fn p_hat(&self) -> f64 {
        (self.y as f64 + 0.5) / (self.n as f64 + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AncDataset {
    pub area_id: String,
    pub observations: Vec<AncObservation>,
}

impl AncDataset {
    pub fn new(area_id: impl Into<String>, observations: Vec<AncObservation>) -> Result<Self> {
        let ds = AncDataset {
            area_id: area_id.into(),
            observations,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for o in &self.observations {
            if o.n == 0 || o.y > o.n {
                return Err(Error::Data(format!(
                    "area {} clinic {} year {}: need 0 <= pos <= tested and tested >= 1",
                    self.area_id, o.clinic_id, o.year
                )));
            }
            if !seen.insert((o.clinic_id.as_str(), o.year)) {
                return Err(Error::Data(format!(
                    "area {} clinic {} year {} appears twice",
                    self.area_id, o.clinic_id, o.year
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Distinct calendar years, ascending.
    pub fn years(&self) -> Vec<i32> {
        let mut ys: Vec<i32> = self.observations.iter().map(|o| o.year).collect();
        ys.sort_unstable();
        ys.dedup();
        ys
    }

    pub fn filter_years(&self, keep: impl Fn(i32) -> bool) -> AncDataset {
        AncDataset {
            area_id: self.area_id.clone(),
            observations: self
                .observations
                .iter()
                .filter(|o| keep(o.year))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyObservation {
    pub year: i32,
    pub prevalence: f64,
    pub se_probit: f64,
}

/// A probit-transformed observation and its approximate sampling variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitPoint {
    pub w: f64,
    pub nu: f64,
}

/// Probit transform with the delta-method binomial variance
/// `p̂(1−p̂) / (n · φ(Φ⁻¹(p̂))²)`.
pub fn probit_counts(y: u64, n: u64) -> ProbitPoint {
    let p = (y as f64 + 0.5) / (n as f64 + 1.0);
    let w = norm_quantile(p);
    let dens = norm_pdf(w);
    ProbitPoint {
        w,
        nu: p * (1.0 - p) / (n as f64 * dens * dens),
    }
}

/// Prior on the clinic random-effect variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomEffectPrior {
    /// Precision `1/σ²` is Gamma(shape, scale); the prior is truncated to
    /// `log σ² ∈ [log_var_min, log_var_max]` and renormalized there.
    InverseGamma {
        shape: f64,
        scale: f64,
        log_var_min: f64,
        log_var_max: f64,
        nodes: usize,
    },
    /// Point mass at a known variance (zero allowed).
    Fixed { variance: f64 },
}

impl Default for RandomEffectPrior {
    fn default() -> Self {
        RandomEffectPrior::InverseGamma {
            shape: 0.58,
            scale: 93.0,
            log_var_min: -15.0,
            log_var_max: 5.0,
            nodes: 61,
        }
    }
}

impl RandomEffectPrior {
    /// Quadrature variances and normalized log-weights.
    fn rule(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match *self {
            RandomEffectPrior::Fixed { variance } => {
                if !(variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidParameter("random-effect variance must be >= 0".into()));
                }
                Ok((vec![variance], vec![0.0]))
            }
            RandomEffectPrior::InverseGamma {
                shape,
                scale,
                log_var_min,
                log_var_max,
                nodes,
            } => {
                if !(shape > 0.0 && scale > 0.0 && log_var_max > log_var_min && nodes >= 2) {
                    return Err(Error::InvalidParameter("bad inverse-gamma quadrature settings".into()));
                }
                let (u, w) = gauss_legendre_on(nodes, log_var_min, log_var_max);
                // Density of u = log σ² when τ = e^{-u} ~ Gamma(shape, scale).
                let log_norm = ln_gamma(shape) + shape * scale.ln();
                let log_w: Vec<f64> = u
                    .iter()
                    .zip(&w)
                    .map(|(&u, &w)| {
                        let tau = (-u).exp();
                        w.ln() + shape * tau.ln() - tau / scale - log_norm
                    })
                    .collect();
                let total = log_sum_exp(&log_w);
                if !total.is_finite() {
                    return Err(Error::InvalidParameter(
                        "random-effect prior has no mass on the quadrature interval".into(),
                    ));
                }
                Ok((
                    u.iter().map(|u| u.exp()).collect(),
                    log_w.iter().map(|l| l - total).collect(),
                ))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct ClinicBlock {
    year_index: Vec<usize>,
    points: Vec<ProbitPoint>,
    sum_log_nu: f64,
    sum_inv_nu: f64,
}

/// ANC data prepared against a fixed projection year range.
#[derive(Debug, Clone)]
pub struct AncLikelihood {
    start_year: i32,
    clinics: Vec<ClinicBlock>,
    variances: Vec<f64>,
    log_weights: Vec<f64>,
}

impl AncLikelihood {
    pub fn new(data: &AncDataset, prior: &RandomEffectPrior, start_year: i32, end_year: i32) -> Result<Self> {
        let mut grouped: BTreeMap<&str, Vec<(usize, ProbitPoint)>> = BTreeMap::new();
        for o in &data.observations {
            if o.year < start_year || o.year > end_year {
                return Err(Error::Data(format!(
                    "observation year {} outside projection range {start_year}-{end_year}",
                    o.year
                )));
            }
            grouped
                .entry(o.clinic_id.as_str())
                .or_default()
                .push(((o.year - start_year) as usize, probit_counts(o.y, o.n)));
        }
        let blocks = grouped
            .into_values()
            .map(|obs| {
                let (year_index, points): (Vec<_>, Vec<_>) = obs.into_iter().unzip();
                Self::block(year_index, points)
            })
            .collect();
        Self::from_blocks(blocks, prior, start_year)
    }

    /// Build directly from per-clinic probit points; each entry is
    /// `(year_index, point)` relative to `start_year`.
    pub fn from_points(
        clinics: Vec<Vec<(usize, ProbitPoint)>>,
        prior: &RandomEffectPrior,
        start_year: i32,
    ) -> Result<Self> {
        let blocks = clinics
            .into_iter()
            .map(|obs| {
                let (year_index, points): (Vec<_>, Vec<_>) = obs.into_iter().unzip();
                Self::block(year_index, points)
            })
            .collect();
        Self::from_blocks(blocks, prior, start_year)
    }

    fn block(year_index: Vec<usize>, points: Vec<ProbitPoint>) -> ClinicBlock {
        ClinicBlock {
            sum_log_nu: points.iter().map(|p| p.nu.ln()).sum(),
            sum_inv_nu: points.iter().map(|p| 1.0 / p.nu).sum(),
            year_index,
            points,
        }
    }

    fn from_blocks(clinics: Vec<ClinicBlock>, prior: &RandomEffectPrior, start_year: i32) -> Result<Self> {
        let (variances, log_weights) = prior.rule()?;
        Ok(AncLikelihood {
            start_year,
            clinics,
            variances,
            log_weights,
        })
    }

    pub fn n_clinics(&self) -> usize {
        self.clinics.len()
    }

    pub fn log_likelihood(&self, proj: &Projection, beta4: f64) -> f64 {
        if self.clinics.is_empty() {
            return 0.0;
        }
        let offset = (self.start_year - proj.start_year()) as usize;
        // Per clinic: (count, Σν⁻¹, Σe/ν, Σe²/ν, Σ log ν).
        let mut stats = Vec::with_capacity(self.clinics.len());
        for c in &self.clinics {
            let (mut se, mut see) = (0.0, 0.0);
            for (&yi, p) in c.year_index.iter().zip(&c.points) {
                let i = yi + offset;
                if proj.clamped[i] {
                    return f64::NEG_INFINITY;
                }
                let mean = norm_quantile(proj.rho[i]) + beta4;
                if !mean.is_finite() {
                    return f64::NEG_INFINITY;
                }
                let e = p.w - mean;
                se += e / p.nu;
                see += e * e / p.nu;
            }
            stats.push((c.points.len() as f64, c.sum_inv_nu, se, see, c.sum_log_nu));
        }
        let per_node: Vec<f64> = self
            .variances
            .iter()
            .zip(&self.log_weights)
            .map(|(&v, &lw)| {
                let ll: f64 = stats
                    .iter()
                    .map(|&(m, s1, se, see, sln)| {
                        let denom = 1.0 + v * s1;
                        let quad = see - v * se * se / denom;
                        -m * LN_SQRT_2PI - 0.5 * (sln + denom.ln() + quad)
                    })
                    .sum();
                lw + ll
            })
            .collect();
        log_sum_exp(&per_node)
    }
}

/// One-shot ANC log-likelihood; prefer [`AncLikelihood`] when evaluating many draws.
pub fn anc_log_likelihood(
    proj: &Projection,
    beta4: f64,
    data: &AncDataset,
    re_prior: &RandomEffectPrior,
) -> Result<f64> {
    let lik = AncLikelihood::new(data, re_prior, proj.start_year(), proj.end_year())?;
    Ok(lik.log_likelihood(proj, beta4))
}

/// Gaussian on the probit scale with no bias and no clinic effect.
pub fn survey_log_likelihood(proj: &Projection, data: &[SurveyObservation]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let i = proj.index_of(s.year).ok_or_else(|| {
            Error::Data(format!("survey year {} outside projection range", s.year))
        })?;
        if !(s.se_probit > 0.0) || !(s.prevalence > 0.0 && s.prevalence < 1.0) {
            return Err(Error::Data(format!("invalid survey point in {}", s.year)));
        }
        if proj.clamped[i] {
            return Ok(f64::NEG_INFINITY);
        }
        let resid = norm_quantile(s.prevalence) - norm_quantile(proj.rho[i]);
        if !resid.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        total += -LN_SQRT_2PI - s.se_probit.ln() - 0.5 * (resid / s.se_probit).powi(2);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_projection(rho: f64, start: i32, end: i32) -> Projection {
        let n = (end - start + 1) as usize;
        Projection {
            years: (start..=end).collect(),
            rho: vec![rho; n],
            incidence: vec![0.0; n],
            r_series: vec![0.0; n],
            y_series: vec![0.0; n],
            n_series: vec![1.0; n],
            clamped: vec![false; n],
        }
    }

    fn obs(c: &str, year: i32, y: u64, n: u64) -> AncObservation {
        AncObservation {
            clinic_id: c.into(),
            year,
            y,
            n,
        }
    }

    fn gauss_ll(x: f64, mean: f64, var: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
    }

    #[test]
    fn probit_examples() {
        let p = probit_counts(4, 9);
        assert_relative_eq!(p.w, -0.125_661_346_855_074, epsilon = 1e-9);
        assert_eq!(probit_counts(2, 4).w, 0.0);
        let p = probit_counts(0, 1);
        assert_relative_eq!(p.w, -0.674_489_750_196_082, epsilon = 1e-12);
        assert_relative_eq!(p.nu, 1.856, epsilon = 2e-3);
        let dens = norm_pdf(-0.674_489_750_196_082);
        assert_relative_eq!(p.nu, 0.1875 / (dens * dens), epsilon = 1e-12);
    }

    #[test]
    fn no_random_effect_single_point() {
        let ds = AncDataset::new("a", vec![obs("c1", 2000, 30, 200)]).unwrap();
        let proj = flat_projection(0.12, 1990, 2005);
        let prior = RandomEffectPrior::Fixed { variance: 0.0 };
        let ll = anc_log_likelihood(&proj, 0.1, &ds, &prior).unwrap();
        let p = probit_counts(30, 200);
        assert_relative_eq!(ll, gauss_ll(p.w, norm_quantile(0.12) + 0.1, p.nu), epsilon = 1e-12);
    }

    #[test]
    fn two_clinics_fixed_variance() {
        let ds = AncDataset::new("a", vec![obs("c1", 2000, 30, 200), obs("c2", 2001, 12, 150)]).unwrap();
        let proj = flat_projection(0.08, 1990, 2005);
        let s2 = 0.04;
        let ll = anc_log_likelihood(&proj, 0.05, &ds, &RandomEffectPrior::Fixed { variance: s2 }).unwrap();
        let mean = norm_quantile(0.08) + 0.05;
        let p1 = probit_counts(30, 200);
        let p2 = probit_counts(12, 150);
        let expect = gauss_ll(p1.w, mean, p1.nu + s2) + gauss_ll(p2.w, mean, p2.nu + s2);
        assert_relative_eq!(ll, expect, epsilon = 1e-12);
    }

    #[test]
    fn empty_and_clamped() {
        let proj = flat_projection(0.08, 1990, 2005);
        let empty = AncDataset::default();
        assert_eq!(anc_log_likelihood(&proj, 0.0, &empty, &Default::default()).unwrap(), 0.0);

        let ds = AncDataset::new("a", vec![obs("c1", 2000, 30, 200)]).unwrap();
        let mut bad = proj.clone();
        bad.clamped[10] = true;
        assert_eq!(
            anc_log_likelihood(&bad, 0.0, &ds, &Default::default()).unwrap(),
            f64::NEG_INFINITY
        );
        let zero = flat_projection(0.0, 1990, 2005);
        assert_eq!(
            anc_log_likelihood(&zero, 0.0, &ds, &Default::default()).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn rejects_years_outside_projection() {
        let ds = AncDataset::new("a", vec![obs("c1", 1985, 3, 100)]).unwrap();
        let proj = flat_projection(0.08, 1990, 2005);
        assert!(anc_log_likelihood(&proj, 0.0, &ds, &Default::default()).is_err());
    }

    #[test]
    fn dataset_invariants() {
        assert!(AncDataset::new("a", vec![obs("c", 2000, 5, 4)]).is_err());
        assert!(AncDataset::new("a", vec![obs("c", 2000, 0, 0)]).is_err());
        assert!(AncDataset::new("a", vec![obs("c", 2000, 1, 4), obs("c", 2000, 2, 4)]).is_err());
    }

    #[test]
    fn relabel_and_reorder_invariance() {
        let proj = flat_projection(0.1, 1990, 2005);
        let a = vec![
            obs("c1", 2000, 30, 200),
            obs("c1", 2001, 25, 180),
            obs("c2", 2000, 9, 120),
            obs("c2", 2002, 14, 130),
        ];
        let mut b: Vec<_> = a
            .iter()
            .map(|o| AncObservation {
                clinic_id: if o.clinic_id == "c1" { "z".into() } else { "y".into() },
                ..o.clone()
            })
            .collect();
        b.reverse();
        let la = anc_log_likelihood(&proj, 0.1, &AncDataset::new("a", a).unwrap(), &Default::default()).unwrap();
        let lb = anc_log_likelihood(&proj, 0.1, &AncDataset::new("a", b).unwrap(), &Default::default()).unwrap();
        assert_relative_eq!(la, lb, epsilon = 1e-12);
    }

    #[test]
    fn uninformative_point_adds_constant() {
        let prior = RandomEffectPrior::default();
        let base = vec![
            vec![(10usize, probit_counts(30, 200)), (11, probit_counts(25, 180))],
            vec![(10usize, probit_counts(9, 120))],
        ];
        let mut extra = base.clone();
        extra[1].push((12, ProbitPoint { w: 0.3, nu: 1e12 }));
        let l0 = AncLikelihood::from_points(base, &prior, 1990).unwrap();
        let l1 = AncLikelihood::from_points(extra, &prior, 1990).unwrap();
        let diffs: Vec<f64> = [0.05, 0.1, 0.2]
            .iter()
            .map(|&rho| {
                let p = flat_projection(rho, 1990, 2005);
                l1.log_likelihood(&p, 0.1) - l0.log_likelihood(&p, 0.1)
            })
            .collect();
        assert!((diffs[0] - diffs[1]).abs() < 1e-8);
        assert!((diffs[0] - diffs[2]).abs() < 1e-8);
    }

    #[test]
    fn concentrated_prior_approaches_independent_gaussians() {
        let ds = AncDataset::new(
            "a",
            vec![obs("c1", 2000, 30, 200), obs("c1", 2001, 25, 180), obs("c2", 2000, 9, 120)],
        )
        .unwrap();
        let proj = flat_projection(0.1, 1990, 2005);
        // Precision around 1e10 on a grid covering its support.
        let near_zero = RandomEffectPrior::InverseGamma {
            shape: 400.0,
            scale: 2.5e7,
            log_var_min: -24.6,
            log_var_max: -21.4,
            nodes: 61,
        };
        let a = anc_log_likelihood(&proj, 0.1, &ds, &near_zero).unwrap();
        let b = anc_log_likelihood(&proj, 0.1, &ds, &RandomEffectPrior::Fixed { variance: 0.0 }).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn single_observation_peaks_at_matching_prevalence() {
        let ds = AncDataset::new("a", vec![obs("c1", 2000, 30, 200)]).unwrap();
        let p = probit_counts(30, 200);
        let beta4 = 0.14;
        let best = crate::numeric::norm_cdf(p.w - beta4);
        let ll = |rho: f64| anc_log_likelihood(&flat_projection(rho, 1990, 2005), beta4, &ds, &Default::default()).unwrap();
        let at_best = ll(best);
        for d in [-0.02, -0.005, 0.005, 0.02] {
            assert!(ll(best + d) < at_best);
        }
        assert!(ll(best - 0.02) < ll(best - 0.005));
        assert!(ll(best + 0.02) < ll(best + 0.005));
    }

    #[test]
    fn survey_examples() {
        let proj = flat_projection(0.15, 1990, 2005);
        let se = 0.05;
        let exact = [SurveyObservation {
            year: 2003,
            prevalence: 0.15,
            se_probit: se,
        }];
        assert_relative_eq!(
            survey_log_likelihood(&proj, &exact).unwrap(),
            -(se * (2.0 * std::f64::consts::PI).sqrt()).ln(),
            epsilon = 1e-12
        );
        let one_sigma = [SurveyObservation {
            year: 2003,
            prevalence: crate::numeric::norm_cdf(norm_quantile(0.15) + se),
            se_probit: se,
        }];
        assert_relative_eq!(
            survey_log_likelihood(&proj, &one_sigma).unwrap(),
            -0.5 - (se * (2.0 * std::f64::consts::PI).sqrt()).ln(),
            epsilon = 1e-9
        );
        assert_eq!(survey_log_likelihood(&proj, &[]).unwrap(), 0.0);
        assert!(survey_log_likelihood(&proj, &[SurveyObservation { year: 1980, ..exact[0] }]).is_err());
    }
}
