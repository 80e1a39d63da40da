//! Per-area posterior: independent prior × ANC likelihood × survey likelihood.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imis::{imis_fit, ImisConfig, ImisOutput, Model, WeightedSamples};
use crate::likelihood::{survey_log_likelihood, AncDataset, AncLikelihood, RandomEffectPrior, SurveyObservation};
use crate::model::{project_epidemic, DemographicSchedule, Projection, EARLIEST_START};
use crate::params::{Theta, N_PARAMS};
use crate::priors::{IndependentPrior, INDEPENDENT_LOCATION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorSettings {
    pub demog: DemographicSchedule,
    pub start_year: i32,
    /// Last projected year; `None` means the last data year.
    pub end_year: Option<i32>,
    pub re_prior: RandomEffectPrior,
    pub use_surveys: bool,
}

impl Default for PosteriorSettings {
    fn default() -> Self {
        PosteriorSettings {
            demog: DemographicSchedule::default(),
            start_year: EARLIEST_START,
            end_year: None,
            re_prior: RandomEffectPrior::default(),
            use_surveys: true,
        }
    }
}

/// Which coordinates are sampled; the rest stay at fixed values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMask {
    free: Vec<usize>,
    base: Theta,
}

impl ParamMask {
    pub fn all() -> Self {
        ParamMask {
            free: (0..N_PARAMS).collect(),
            base: Theta::from_array(INDEPENDENT_LOCATION),
        }
    }

    /// Sample only `free`; all other coordinates are pinned to `base`.
    pub fn pinned(free: &[usize], base: Theta) -> Result<Self> {
        let mut free = free.to_vec();
        free.sort_unstable();
        free.dedup();
        if free.is_empty() || free.iter().any(|&j| j >= N_PARAMS) {
            return Err(Error::InvalidParameter("free coordinates must be a nonempty subset of 0..8".into()));
        }
        Ok(ParamMask { free, base })
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn expand(&self, x: &[f64]) -> Theta {
        let mut v = self.base.to_array();
        for (&j, &xi) in self.free.iter().zip(x) {
            v[j] = xi;
        }
        Theta::from_array(v)
    }

    pub fn reduce(&self, theta: &Theta) -> Vec<f64> {
        self.free.iter().map(|&j| theta.get(j)).collect()
    }
}

/// Posterior of one area under the independent prior.
#[derive(Debug, Clone)]
pub struct EppPosterior {
    mask: ParamMask,
    demog: DemographicSchedule,
    start_year: i32,
    end_year: i32,
    anc: AncLikelihood,
    surveys: Vec<SurveyObservation>,
}

impl EppPosterior {
    pub fn new(anc: &AncDataset, surveys: &[SurveyObservation], settings: &PosteriorSettings) -> Result<Self> {
        Self::with_mask(anc, surveys, settings, ParamMask::all())
    }

    pub fn with_mask(
        anc: &AncDataset,
        surveys: &[SurveyObservation],
        settings: &PosteriorSettings,
        mask: ParamMask,
    ) -> Result<Self> {
        anc.validate()?;
        settings.demog.validate()?;
        let last_data = anc
            .observations
            .iter()
            .map(|o| o.year)
            .chain(surveys.iter().map(|s| s.year))
            .max();
        let end_year = match (settings.end_year, last_data) {
            (Some(e), _) => e,
            (None, Some(y)) => y,
            (None, None) => settings.start_year,
        };
        let end_year = end_year.max(settings.start_year);
        if let Some(bad) = anc.observations.iter().find(|o| o.year < settings.start_year) {
            return Err(Error::Data(format!(
                "area {}: observation year {} precedes simulation start {}",
                anc.area_id, bad.year, settings.start_year
            )));
        }
        let surveys = if settings.use_surveys { surveys.to_vec() } else { Vec::new() };
        if let Some(bad) = surveys.iter().find(|s| s.year < settings.start_year || s.year > end_year) {
            return Err(Error::Data(format!("area {}: survey year {} outside projection range", anc.area_id, bad.year)));
        }
        Ok(EppPosterior {
            anc: AncLikelihood::new(anc, &settings.re_prior, settings.start_year, end_year)?,
            mask,
            demog: settings.demog,
            start_year: settings.start_year,
            end_year,
            surveys,
        })
    }

    pub fn mask(&self) -> &ParamMask {
        &self.mask
    }

    pub fn end_year(&self) -> i32 {
        self.end_year
    }

    pub fn project(&self, theta: &Theta) -> Result<Projection> {
        project_epidemic(theta, &self.demog, self.start_year, self.end_year)
    }

    /// Log prior of the free coordinates (pinned ones are conditioned on).
    pub fn theta_log_prior(&self, theta: &Theta) -> f64 {
        self.mask.free.iter().map(|&j| IndependentPrior.marginal_ln_pdf(j, theta.get(j))).sum()
    }

    /// Data log-likelihood; any projection failure is −∞.
    pub fn theta_log_likelihood(&self, theta: &Theta) -> f64 {
        let proj = match self.project(theta) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        let mut ll = self.anc.log_likelihood(&proj, theta.beta4);
        if !self.surveys.is_empty() && ll > f64::NEG_INFINITY {
            ll += survey_log_likelihood(&proj, &self.surveys).unwrap_or(f64::NEG_INFINITY);
        }
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    pub fn log_density(&self, theta: &Theta) -> f64 {
        let lp = self.theta_log_prior(theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.theta_log_likelihood(theta)
    }

    /// Run IMIS and package the stored draws.
    pub fn fit(&self, area_id: &str, config: &ImisConfig, rng: &mut dyn RngCore) -> Result<(WeightedSamples, ImisOutput)> {
        let out = imis_fit(self, config, rng)?;
        let ws = WeightedSamples {
            area_id: area_id.to_string(),
            thetas: out.points.iter().map(|x| self.mask.expand(x)).collect(),
            log_target: out.log_target.clone(),
            log_sampler: out.log_sampler.clone(),
            weight: out.weights.clone(),
        };
        Ok((ws, out))
    }
}

impl Model for EppPosterior {
    fn dim(&self) -> usize {
        self.mask.free.len()
    }

    fn sample_prior(&self, mut rng: &mut dyn RngCore) -> Vec<f64> {
        self.mask
            .free
            .iter()
            .map(|&j| IndependentPrior.sample_marginal(j, &mut rng))
            .collect()
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        self.theta_log_prior(&self.mask.expand(x))
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.theta_log_likelihood(&self.mask.expand(x))
    }

    fn scales(&self) -> Vec<f64> {
        let s = IndependentPrior.scales();
        self.mask.free.iter().map(|&j| s[j]).collect()
    }
}

/// Independent log prior plus ANC and survey log-likelihoods.
pub fn log_posterior(
    theta: &Theta,
    anc: &AncDataset,
    surveys: &[SurveyObservation],
    demog: &DemographicSchedule,
    re_prior: &RandomEffectPrior,
) -> Result<f64> {
    let settings = PosteriorSettings {
        demog: *demog,
        re_prior: *re_prior,
        ..Default::default()
    };
    Ok(EppPosterior::new(anc, surveys, &settings)?.log_density(theta))
}
