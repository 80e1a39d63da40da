//! Hold-out splits, clinic-prevalence prediction error and cross-area
//! posterior correlations.

use serde::{Deserialize, Serialize};

use crate::combine::JointPosterior;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::likelihood::AncDataset;
use crate::model::{project_epidemic, DemographicSchedule, Projection, EARLIEST_START};
use crate::numeric::{norm_cdf, norm_quantile, weighted_quantile};
use crate::params::Theta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Hold out the last three distinct years.
    Last3,
    /// Train on the middle six distinct years, test on both ends.
    Mid6,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Last3 => "last3",
            Scenario::Mid6 => "mid6",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub scenario: Scenario,
    /// Under `mid6`, the only area whose data is cut; others keep everything.
    #[serde(default)]
    pub low_quality_area: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: AncDataset,
    pub test_early: AncDataset,
    pub test_late: AncDataset,
}

impl Split {
    pub fn test(&self) -> AncDataset {
        let mut all = self.test_early.clone();
        all.observations.extend(self.test_late.observations.iter().cloned());
        all
    }

    pub fn segment(&self, which: Segment) -> AncDataset {
        match which {
            Segment::Early => self.test_early.clone(),
            Segment::Late => self.test_late.clone(),
            Segment::All => self.test(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Early,
    Late,
    All,
}

pub fn split(data: &AncDataset, spec: &SplitSpec) -> Result<Split> {
    let empty = || AncDataset {
        area_id: data.area_id.clone(),
        observations: Vec::new(),
    };
    if spec.scenario == Scenario::Mid6 {
        if let Some(area) = &spec.low_quality_area {
            if *area != data.area_id {
                return Ok(Split {
                    train: data.clone(),
                    test_early: empty(),
                    test_late: empty(),
                });
            }
        }
    }
    let years = data.years();
    match spec.scenario {
        Scenario::Last3 => {
            if years.len() < 4 {
                return Err(Error::InsufficientYears { scenario: "last3", required: 4, found: years.len() });
            }
            let cut = years[years.len() - 3];
            Ok(Split {
                train: data.filter_years(|y| y < cut),
                test_early: empty(),
                test_late: data.filter_years(|y| y >= cut),
            })
        }
        Scenario::Mid6 => {
            if years.len() < 8 {
                return Err(Error::InsufficientYears { scenario: "mid6", required: 8, found: years.len() });
            }
            let (first, last) = (years[0], years[years.len() - 1]);
            let mid = (first + last).div_euclid(2);
            let (lo, hi) = (mid - 2, mid + 3);
            Ok(Split {
                train: data.filter_years(|y| (lo..=hi).contains(&y)),
                test_early: data.filter_years(|y| y < lo),
                test_late: data.filter_years(|y| y > hi),
            })
        }
    }
}

/// Posterior mean ANC-scale prevalence `Φ(Φ⁻¹(ρ_t) + β₄)` per year.
#[derive(Debug, Clone, PartialEq)]
pub struct AncPrediction {
    pub years: Vec<i32>,
    pub mean: Vec<f64>,
}

impl AncPrediction {
    pub fn at(&self, year: i32) -> Option<f64> {
        let start = *self.years.first()?;
        self.mean.get(usize::try_from(year - start).ok()?).copied()
    }
}

pub fn project_all(
    thetas: &[Theta],
    demog: &DemographicSchedule,
    end_year: i32,
    exec: Execution,
) -> Result<Vec<Projection>> {
    exec.map(thetas, |t| project_epidemic(t, demog, EARLIEST_START, end_year))
        .into_iter()
        .collect()
}

pub fn anc_prediction(
    thetas: &[Theta],
    weights: &[f64],
    demog: &DemographicSchedule,
    end_year: i32,
    exec: Execution,
) -> Result<AncPrediction> {
    if thetas.is_empty() || thetas.len() != weights.len() {
        return Err(Error::InvalidParameter("need matching, nonempty draws and weights".into()));
    }
    let projections = project_all(thetas, demog, end_year, exec)?;
    let years = projections[0].years.clone();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; years.len()];
    for ((p, t), w) in projections.iter().zip(thetas).zip(weights) {
        for (m, &rho) in mean.iter_mut().zip(&p.rho) {
            *m += w / total * norm_cdf(norm_quantile(rho) + t.beta4);
        }
    }
    Ok(AncPrediction { years, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaeGranularity {
    /// Average clinics within a year first.
    #[default]
    Year,
    /// One residual per clinic-year.
    Clinic,
}

/// Mean absolute error in percentage points against continuity-corrected clinic prevalence.
pub fn mae_clinic_prevalence(pred: &AncPrediction, test: &AncDataset, granularity: MaeGranularity) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data(format!("area {}: empty test segment", test.area_id)));
    }
    let predicted = |year: i32| {
        pred.at(year)
            .ok_or_else(|| Error::Data(format!("test year {year} not covered by the posterior projection")))
    };
    let errors: Vec<f64> = match granularity {
        MaeGranularity::Clinic => test
            .observations
            .iter()
            .map(|o| Ok(100.0 * (predicted(o.year)? - o.p_hat()).abs()))
            .collect::<Result<_>>()?,
        MaeGranularity::Year => test
            .years()
            .into_iter()
            .map(|year| {
                let ps: Vec<f64> = test.observations.iter().filter(|o| o.year == year).map(|o| o.p_hat()).collect();
                let observed = ps.iter().sum::<f64>() / ps.len() as f64;
                Ok(100.0 * (predicted(year)? - observed).abs())
            })
            .collect::<Result<_>>()?,
    };
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Equal-weight convenience over posterior draws.
pub fn mae_for_draws(
    thetas: &[Theta],
    demog: &DemographicSchedule,
    test: &AncDataset,
    granularity: MaeGranularity,
    exec: Execution,
) -> Result<f64> {
    let end = test.years().last().copied().unwrap_or(EARLIEST_START);
    let w = vec![1.0; thetas.len()];
    mae_clinic_prevalence(&anc_prediction(thetas, &w, demog, end, exec)?, test, granularity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    #[default]
    Prevalence,
    Incidence,
}

/// `K×K` correlation matrix for one year; `None` where a variance is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct YearCorrelation {
    pub year: i32,
    pub matrix: Vec<Vec<Option<f64>>>,
}

/// Weighted Pearson correlation; `None` when either series is constant.
pub fn weighted_correlation(x: &[f64], y: &[f64], w: &[f64]) -> Option<f64> {
    let total: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / total;
    let my = y.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / total;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for ((a, b), w) in x.iter().zip(y).zip(w) {
        let (da, db) = (a - mx, b - my);
        sxx += w * da * da;
        syy += w * db * db;
        sxy += w * da * db;
    }
    let scale = mx.abs().max(my.abs()).max(f64::MIN_POSITIVE);
    let tiny = 1e-24 * scale * scale * total;
    if sxx <= tiny || syy <= tiny {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn cross_area_correlation(
    jp: &JointPosterior,
    quantity: Quantity,
    demog: &DemographicSchedule,
    end_year: i32,
    exec: Execution,
) -> Result<Vec<YearCorrelation>> {
    let k = jp.k();
    if k < 2 {
        return Err(Error::InvalidParameter("correlations need at least two areas".into()));
    }
    if jp.is_empty() {
        return Err(Error::InvalidParameter("joint posterior is empty".into()));
    }
    let per_area: Vec<Vec<Projection>> = (0..k)
        .map(|a| project_all(&jp.area_thetas(a), demog, end_year, exec))
        .collect::<Result<_>>()?;
    let years = per_area[0][0].years.clone();
    let series = |a: usize, i: usize| -> Vec<f64> {
        per_area[a]
            .iter()
            .map(|p| match quantity {
                Quantity::Prevalence => p.rho[i],
                Quantity::Incidence => p.incidence[i],
            })
            .collect()
    };
    Ok(exec.map_range(years.len(), |i| {
        let cols: Vec<Vec<f64>> = (0..k).map(|a| series(a, i)).collect();
        let mut matrix = vec![vec![None; k]; k];
        for a in 0..k {
            for b in a..k {
                let c = weighted_correlation(&cols[a], &cols[b], &jp.weights);
                let c = if a == b { c.map(|_| 1.0) } else { c };
                matrix[a][b] = c;
                matrix[b][a] = c;
            }
        }
        YearCorrelation { year: years[i], matrix }
    }))
}

/// Pointwise posterior quantile band of yearly prevalence.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub years: Vec<i32>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn prevalence_band(
    thetas: &[Theta],
    weights: &[f64],
    demog: &DemographicSchedule,
    end_year: i32,
    level: f64,
    exec: Execution,
) -> Result<Band> {
    if thetas.is_empty() || thetas.len() != weights.len() || !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidParameter("band needs draws, matching weights and a level in (0, 1)".into()));
    }
    let projections = project_all(thetas, demog, end_year, exec)?;
    let years = projections[0].years.clone();
    let tail = 0.5 * (1.0 - level);
    let mut band = Band { years, lower: vec![], median: vec![], upper: vec![] };
    for i in 0..band.years.len() {
        let v: Vec<f64> = projections.iter().map(|p| p.rho[i]).collect();
        band.lower.push(weighted_quantile(&v, weights, tail));
        band.median.push(weighted_quantile(&v, weights, 0.5));
        band.upper.push(weighted_quantile(&v, weights, 1.0 - tail));
    }
    Ok(band)
}
