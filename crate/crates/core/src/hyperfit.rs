//! Empirical-Bayes estimates of the mixture weights and equicorrelations
//! from posterior-mean point estimates of several multi-area countries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numeric::{beta_ln_pdf, log_add_exp};
use crate::params::{Theta, N_PARAMS, T0};
use crate::priors::{t_ln_pdf, EquicorrelatedT, Hyper, IndependentPrior, INDEPENDENT_DF, T0_BOUNDS};

pub const GRID_SIZE: usize = 201;
pub const RHO_MAX: f64 = 0.999;

/// Prior on a mixture weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiPrior {
    /// Beta(1.5, 1): mean 0.6 and density 1.5 at 1.
    #[default]
    StatedMoments,
    /// Beta(1, 1.5), the literal parameterization.
    AsWritten,
}

impl PiPrior {
    pub fn shape(self) -> (f64, f64) {
        match self {
            PiPrior::StatedMoments => (1.5, 1.0),
            PiPrior::AsWritten => (1.0, 1.5),
        }
    }

    pub fn ln_pdf(self, pi: f64) -> f64 {
        let (a, b) = self.shape();
        beta_ln_pdf(pi, a, b)
    }

    pub fn mean(self) -> f64 {
        let (a, b) = self.shape();
        a / (a + b)
    }
}

/// `(rho + 1)/2 ~ Beta(1.5, 1.5)`, as the Beta log density of the shifted value.
pub fn rho_prior_ln_pdf(rho: f64) -> f64 {
    beta_ln_pdf(0.5 * (rho + 1.0), 1.5, 1.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryEstimates {
    pub country: String,
    pub areas: Vec<String>,
    pub thetas: Vec<Theta>,
    /// Data years per area, when known (used for quality screening).
    #[serde(default)]
    pub years: Vec<Option<u32>>,
    /// Survey points per area, when known.
    #[serde(default)]
    pub surveys: Vec<Option<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointEstimateTable {
    pub countries: Vec<CountryEstimates>,
}

/// Keep countries whose every area has enough data years and survey points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityScreen {
    pub enabled: bool,
    pub min_years: u32,
    pub min_surveys: u32,
}

impl Default for QualityScreen {
    fn default() -> Self {
        QualityScreen {
            enabled: true,
            min_years: 7,
            min_surveys: 1,
        }
    }
}

impl QualityScreen {
    /// Areas without recorded counts pass.
    pub fn accepts(&self, c: &CountryEstimates) -> bool {
        if !self.enabled {
            return true;
        }
        let ok_years = c.years.iter().all(|y| y.is_none_or(|y| y >= self.min_years));
        let ok_surveys = c.surveys.iter().all(|s| s.is_none_or(|s| s >= self.min_surveys));
        ok_years && ok_surveys
    }
}

impl PointEstimateTable {
    pub fn validate(&self) -> Result<()> {
        if self.countries.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 countries, found {}",
                self.countries.len()
            )));
        }
        for c in &self.countries {
            if c.thetas.len() < 2 {
                return Err(Error::Data(format!("country {} has fewer than 2 areas", c.country)));
            }
            if c.areas.len() != c.thetas.len() {
                return Err(Error::Data(format!("country {}: area ids and estimates differ in length", c.country)));
            }
            if c.thetas.iter().any(|t| !t.is_finite()) {
                return Err(Error::Data(format!("country {}: non-finite estimate", c.country)));
            }
        }
        Ok(())
    }

    pub fn screened(&self, screen: &QualityScreen) -> PointEstimateTable {
        PointEstimateTable {
            countries: self.countries.iter().filter(|c| screen.accepts(c)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperfitConfig {
    pub pi_prior: PiPrior,
    pub df: f64,
    pub t0_bounds: [f64; 2],
    /// Off gives the maximum-likelihood grid point instead of the posterior mode.
    pub use_priors: bool,
    pub execution: Execution,
}

impl Default for HyperfitConfig {
    fn default() -> Self {
        HyperfitConfig {
            pi_prior: PiPrior::default(),
            use_priors: true,
            df: INDEPENDENT_DF,
            t0_bounds: T0_BOUNDS,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperfitResult {
    pub pi0: [f64; N_PARAMS],
    pub rho0: [f64; N_PARAMS],
    /// Log posterior at the mode, per coordinate.
    pub objective: [f64; N_PARAMS],
    /// Coordinates whose estimates are all identical.
    pub degenerate: Vec<usize>,
}

impl HyperfitResult {
    pub fn into_hyper(self, mu0: [f64; N_PARAMS], sigma0: [f64; N_PARAMS], config: &HyperfitConfig) -> Hyper {
        Hyper {
            mu0,
            sigma0,
            rho0: self.rho0,
            pi0: self.pi0,
            df: config.df,
            t0_bounds: config.t0_bounds,
        }
    }
}

pub fn grid_point(i: usize, max: f64) -> f64 {
    if i == GRID_SIZE - 1 {
        max
    } else {
        max * i as f64 / (GRID_SIZE - 1) as f64
    }
}

/// Per-coordinate grid search for the posterior mode of `(pi0_j, rho0_j)`.
///
/// Ties go to the larger `pi0_j`, then the smaller `rho0_j`.
pub fn estimate_hyperparameters(
    table: &PointEstimateTable,
    mu0: &[f64; N_PARAMS],
    sigma0: &[f64; N_PARAMS],
    config: &HyperfitConfig,
) -> Result<HyperfitResult> {
    table.validate()?;
    let columns: Vec<Vec<Vec<f64>>> = (0..N_PARAMS)
        .map(|j| table.countries.iter().map(|c| c.thetas.iter().map(|t| t.get(j)).collect()).collect())
        .collect();
    let mut degenerate = Vec::new();
    for (j, cols) in columns.iter().enumerate() {
        let first = cols[0][0];
        if cols.iter().flatten().all(|&v| v == first) {
            log::warn!("all point estimates of coordinate {j} are identical; the mode sits on the grid boundary");
            degenerate.push(j);
        }
    }

    // log f0 per country and coordinate; independent marginals use the same
    // location and scale as the hierarchical component.
    let f0: Vec<Vec<f64>> = (0..N_PARAMS)
        .map(|j| {
            columns[j]
                .iter()
                .map(|col| {
                    if j == T0 {
                        col.iter().map(|&x| IndependentPrior.marginal_ln_pdf(T0, x)).sum()
                    } else {
                        col.iter().map(|&x| t_ln_pdf(x, mu0[j], sigma0[j], config.df)).sum()
                    }
                })
                .collect()
        })
        .collect();

    // log f1 for every (coordinate, rho) cell.
    let cells: Vec<(usize, usize)> = (0..N_PARAMS).flat_map(|j| (0..GRID_SIZE).map(move |r| (j, r))).collect();
    let f1: Vec<Result<Vec<f64>>> = config.execution.map(&cells, |&(j, r)| {
        let rho = grid_point(r, RHO_MAX);
        let mut cache: Vec<(usize, EquicorrelatedT)> = Vec::new();
        columns[j]
            .iter()
            .map(|col| {
                let k = col.len();
                if let Some((_, d)) = cache.iter().find(|(kk, _)| *kk == k) {
                    return Ok(d.ln_pdf(col));
                }
                let mut d = EquicorrelatedT::new(k, mu0[j], sigma0[j], rho, config.df)?;
                if j == T0 {
                    d = d.truncated(config.t0_bounds);
                }
                let v = d.ln_pdf(col);
                cache.push((k, d));
                Ok(v)
            })
            .collect()
    });
    let f1: Vec<Vec<f64>> = f1.into_iter().collect::<Result<_>>()?;

    let mut out = HyperfitResult {
        pi0: [0.0; N_PARAMS],
        rho0: [0.0; N_PARAMS],
        objective: [f64::NEG_INFINITY; N_PARAMS],
        degenerate,
    };
    for j in 0..N_PARAMS {
        let mut best = (f64::NEG_INFINITY, 1.0, 0.0);
        // Larger pi first, smaller rho first; strict improvement keeps the earlier cell on ties.
        for p in (0..GRID_SIZE).rev() {
            let pi = grid_point(p, 1.0);
            let lp_pi = if config.use_priors { config.pi_prior.ln_pdf(pi) } else { 0.0 };
            if lp_pi == f64::NEG_INFINITY {
                continue;
            }
            for r in 0..GRID_SIZE {
                let rho = grid_point(r, RHO_MAX);
                let f1_col = &f1[j * GRID_SIZE + r];
                let ll: f64 = f0[j]
                    .iter()
                    .zip(f1_col)
                    .map(|(&a, &b)| mix(pi, a, b))
                    .sum();
                let lp_rho = if config.use_priors { rho_prior_ln_pdf(rho) } else { 0.0 };
                let obj = ll + lp_pi + lp_rho;
                if obj > best.0 {
                    best = (obj, pi, rho);
                }
            }
        }
        out.objective[j] = best.0;
        out.pi0[j] = best.1;
        out.rho0[j] = best.2;
    }
    Ok(out)
}

fn mix(pi: f64, f0: f64, f1: f64) -> f64 {
    if pi == 1.0 {
        f0
    } else if pi == 0.0 {
        f1
    } else {
        log_add_exp(pi.ln() + f0, (1.0 - pi).ln() + f1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::sample_independent_prior;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn table(seed: u64, countries: usize) -> PointEstimateTable {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        PointEstimateTable {
            countries: (0..countries)
                .map(|c| CountryEstimates {
                    country: format!("c{c}"),
                    areas: vec!["a".into(), "b".into()],
                    thetas: sample_independent_prior(2, &mut rng),
                    years: vec![],
                    surveys: vec![],
                })
                .collect(),
        }
    }

    fn seq() -> HyperfitConfig {
        HyperfitConfig { execution: Execution::Sequential, ..Default::default() }
    }

    #[test]
    fn prior_densities() {
        assert_relative_eq!(rho_prior_ln_pdf(0.0).exp(), 1.2732, epsilon = 5e-4);
        assert_relative_eq!(PiPrior::StatedMoments.ln_pdf(1.0).exp(), 1.5, epsilon = 1e-9);
        assert_relative_eq!(PiPrior::StatedMoments.mean(), 0.6, epsilon = 1e-9);
        assert_relative_eq!(PiPrior::AsWritten.mean(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn permutation_and_repetition_invariance() {
        let hyper = Hyper::reference();
        let t = table(5, 6);
        let a = estimate_hyperparameters(&t, &hyper.mu0, &hyper.sigma0, &seq()).unwrap();
        let mut rev = t.clone();
        rev.countries.reverse();
        let b = estimate_hyperparameters(&rev, &hyper.mu0, &hyper.sigma0, &seq()).unwrap();
        assert_eq!((a.pi0, a.rho0), (b.pi0, b.rho0));

        // Without the priors the objective is m times the single-copy one.
        let ml = HyperfitConfig { use_priors: false, ..seq() };
        let once = PointEstimateTable { countries: t.countries[..2].to_vec() };
        let mut thrice = once.clone();
        for _ in 0..2 {
            thrice.countries.extend(once.countries.iter().cloned());
        }
        let s = estimate_hyperparameters(&once, &hyper.mu0, &hyper.sigma0, &ml).unwrap();
        let r = estimate_hyperparameters(&thrice, &hyper.mu0, &hyper.sigma0, &ml).unwrap();
        assert_eq!((s.pi0, s.rho0), (r.pi0, r.rho0));
        for j in 0..N_PARAMS {
            assert!((0.0..=1.0).contains(&a.pi0[j]) && (0.0..1.0).contains(&a.rho0[j]));
        }
    }

    #[test]
    fn needs_two_countries() {
        let hyper = Hyper::reference();
        assert!(estimate_hyperparameters(&table(1, 1), &hyper.mu0, &hyper.sigma0, &seq()).is_err());
    }

    #[test]
    fn degenerate_is_flagged() {
        let hyper = Hyper::reference();
        let mut t = table(2, 3);
        for c in &mut t.countries {
            for th in &mut c.thetas {
                th.beta2 = -0.68;
            }
        }
        let r = estimate_hyperparameters(&t, &hyper.mu0, &hyper.sigma0, &seq()).unwrap();
        assert_eq!(r.degenerate, vec![5]);
        assert_eq!(r.rho0[5], RHO_MAX);
    }

    #[test]
    fn screening() {
        let mut c = table(3, 1).countries.remove(0);
        c.years = vec![Some(10), Some(6)];
        let screen = QualityScreen::default();
        assert!(!screen.accepts(&c));
        assert!(QualityScreen { enabled: false, ..screen }.accepts(&c));
        c.years = vec![Some(10), Some(7)];
        c.surveys = vec![Some(1), None];
        assert!(screen.accepts(&c));
    }
}
