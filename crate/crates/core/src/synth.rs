//! Synthetic ANC datasets drawn from the clinic random-effect model.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{AncDataset, AncObservation, SurveyObservation};
use crate::model::{project_epidemic, DemographicSchedule, Projection, EARLIEST_START};
use crate::numeric::{norm_cdf, norm_pdf, norm_quantile};
use crate::params::Theta;
use crate::priors::{Hyper, MixturePrior};

/// One national survey point per area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyDesign {
    pub year: i32,
    pub se_probit: f64,
}

/// Observation design for one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub clinics: usize,
    /// Calendar years every clinic is observed in.
    pub years: Vec<i32>,
    /// Women tested per clinic-year.
    pub n: u64,
    /// Standard deviation of the clinic effect on the probit scale.
    pub sigma_clinic: f64,
    pub demog: DemographicSchedule,
    pub survey: Option<SurveyDesign>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            clinics: 10,
            years: (1990..2002).collect(),
            n: 300,
            sigma_clinic: 0.3,
            demog: DemographicSchedule::default(),
            survey: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clinics == 0 || self.years.is_empty() || self.n == 0 {
            return Err(Error::InvalidParameter("clinics, years and n must be positive".into()));
        }
        if !(self.sigma_clinic >= 0.0) {
            return Err(Error::InvalidParameter("sigma_clinic must be non-negative".into()));
        }
        if self.years.iter().any(|&y| y < EARLIEST_START) {
            return Err(Error::InvalidParameter(format!("years must not precede {EARLIEST_START}")));
        }
        if let Some(s) = self.survey {
            if !(s.se_probit > 0.0) || s.year < EARLIEST_START {
                return Err(Error::InvalidParameter("invalid survey design".into()));
            }
        }
        self.demog.validate()
    }

    pub fn last_year(&self) -> i32 {
        let data = self.years.iter().copied().max().unwrap_or(EARLIEST_START);
        self.survey.map_or(data, |s| data.max(s.year))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArea {
    pub theta: Theta,
    pub data: AncDataset,
    pub surveys: Vec<SurveyObservation>,
    pub truth: Projection,
}

/// Ground truth written next to the synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaTruth {
    pub area_id: String,
    pub theta: Theta,
    pub years: Vec<i32>,
    pub rho: Vec<f64>,
    pub incidence: Vec<f64>,
}

impl SynthArea {
    pub fn truth_record(&self) -> AreaTruth {
        AreaTruth {
            area_id: self.data.area_id.clone(),
            theta: self.theta,
            years: self.truth.years.clone(),
            rho: self.truth.rho.clone(),
            incidence: self.truth.incidence.clone(),
        }
    }
}

/// Invert a probit draw to a count so that `probit_counts` roughly recovers it.
pub fn count_from_probit(w: f64, n: u64) -> u64 {
    let y = ((n as f64 + 1.0) * norm_cdf(w) - 0.5).round();
    y.clamp(0.0, n as f64) as u64
}

pub fn generate_area(
    area_id: &str,
    theta: &Theta,
    spec: &SynthSpec,
    rng: &mut dyn RngCore,
) -> Result<SynthArea> {
    spec.validate()?;
    let truth = project_epidemic(theta, &spec.demog, EARLIEST_START, spec.last_year())?;
    let mut observations = Vec::with_capacity(spec.clinics * spec.years.len());
    let effect = Normal::new(0.0, spec.sigma_clinic).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut years = spec.years.clone();
    years.sort_unstable();
    years.dedup();
    for c in 0..spec.clinics {
        let b = effect.sample(rng);
        for &year in &years {
            let rho = truth.prevalence_at(year).expect("year inside projection");
            let mean = norm_quantile(rho) + theta.beta4 + b;
            let w = if mean.is_finite() {
                // Variance at the expected continuity-corrected proportion, as
                // the likelihood would compute it from a typical count.
                let p = (spec.n as f64 * norm_cdf(mean) + 0.5) / (spec.n as f64 + 1.0);
                let dens = norm_pdf(norm_quantile(p));
                let nu = p * (1.0 - p) / (spec.n as f64 * dens * dens);
                if nu.is_finite() && nu > 0.0 {
                    mean + nu.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    mean
                }
            } else {
                mean
            };
            observations.push(AncObservation {
                clinic_id: format!("{area_id}-c{:02}", c + 1),
                year,
                y: count_from_probit(w, spec.n),
                n: spec.n,
            });
        }
    }
    let mut surveys = Vec::new();
    if let Some(s) = spec.survey {
        let rho = truth.prevalence_at(s.year).expect("survey year inside projection");
        let z = norm_quantile(rho) + s.se_probit * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let prevalence = norm_cdf(z).clamp(1e-9, 1.0 - 1e-9);
        surveys.push(SurveyObservation { year: s.year, prevalence, se_probit: s.se_probit });
    }
    Ok(SynthArea {
        theta: *theta,
        data: AncDataset::new(area_id, observations)?,
        surveys,
        truth,
    })
}

/// Draw a country's thetas from the mixture prior, then simulate each area.
///
/// Draws whose projection fails are redrawn, at most `MAX_REDRAWS` times.
/// Each area gets its own stream seeded from `rng`.
pub fn generate_country(
    hyper: &Hyper,
    designs: &[(String, SynthSpec)],
    rng: &mut dyn RngCore,
) -> Result<Vec<SynthArea>> {
    if designs.is_empty() {
        return Err(Error::InvalidParameter("need at least one area".into()));
    }
    let prior = MixturePrior::new(hyper, designs.len())?;
    let mut last_err = None;
    for _ in 0..MAX_REDRAWS {
        let thetas = prior.sample(rng)?;
        let seeds: Vec<u64> = designs.iter().map(|_| rng.next_u64()).collect();
        let areas: Result<Vec<SynthArea>> = designs
            .iter()
            .zip(&thetas)
            .zip(&seeds)
            .map(|(((id, spec), theta), &seed)| {
                let mut area_rng = ChaCha20Rng::seed_from_u64(seed);
                generate_area(id, theta, spec, &mut area_rng)
            })
            .collect();
        match areas {
            Ok(a) if a.iter().all(|x| !x.truth.any_clamped()) => return Ok(a),
            Ok(_) => {}
            Err(e @ Error::InvalidParameter(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::InvalidParameter("no valid country draw".into())))
}

pub const MAX_REDRAWS: usize = 1000;
