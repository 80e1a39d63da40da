//! Forward simulation of the susceptible–infected EPP model.
//!
//! The adult population is split into uninfected `Z` and infected `Y`; the
//! infection rate `r(t)` follows a log-linear trend that pulls it towards
//! `beta0`, responds to prevalence and damps once the epidemic has been
//! running for `t1` years. Integration is forward Euler on a 0.1-year grid
//! with yearly snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Theta;

/// Prevalence at the epidemic start year.
pub const SEED_PREVALENCE: f64 = 2.5e-5;
/// Simulation never starts before this calendar year.
pub const EARLIEST_START: i32 = 1970;
pub const DEFAULT_DT: f64 = 0.1;

/// Constant demographic rates standing in for life tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemographicSchedule {
    /// Non-AIDS mortality, per person-year.
    pub mu: f64,
    /// Ageing out at 50, per person-year.
    pub a50: f64,
    /// Net migration, per person-year.
    pub m: f64,
    /// New adults per year as a fraction of current population.
    pub entry_rate: f64,
    /// HIV mortality applied to `Y`, per person-year.
    pub delta: f64,
    pub n_init: f64,
}

impl Default for DemographicSchedule {
    fn default() -> Self {
        DemographicSchedule {
            mu: 0.01,
            a50: 0.02,
            m: 0.0,
            entry_rate: 0.03,
            delta: 1.0 / 11.0,
            n_init: 1e6,
        }
    }
}

impl DemographicSchedule {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.mu, self.a50, self.m, self.entry_rate, self.delta];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidParameter(
                "demographic rates must be finite and non-negative".into(),
            ));
        }
        if !(self.n_init > 0.0 && self.n_init.is_finite()) {
            return Err(Error::InvalidParameter("n_init must be positive".into()));
        }
        if self.mu + self.a50 >= 1.0 {
            return Err(Error::InvalidParameter("mu + a50 must be below 1 per year".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpiState {
    pub z: f64,
    pub y: f64,
    pub r: f64,
    pub t: f64,
}

impl EpiState {
    pub fn prevalence(&self) -> f64 {
        let n = self.z + self.y;
        if n > 0.0 {
            self.y / n
        } else {
            0.0
        }
    }
}

/// Yearly trajectories from one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub years: Vec<i32>,
    pub rho: Vec<f64>,
    pub incidence: Vec<f64>,
    pub r_series: Vec<f64>,
    pub y_series: Vec<f64>,
    pub n_series: Vec<f64>,
    /// Set from the first year in which a compartment had to be clamped at zero.
    pub clamped: Vec<bool>,
}

impl Projection {
    pub fn start_year(&self) -> i32 {
        self.years[0]
    }

    pub fn end_year(&self) -> i32 {
        *self.years.last().expect("projection covers at least one year")
    }

    pub fn index_of(&self, year: i32) -> Option<usize> {
        let i = year.checked_sub(self.start_year())?;
        (i >= 0 && (i as usize) < self.years.len()).then_some(i as usize)
    }

    pub fn prevalence_at(&self, year: i32) -> Option<f64> {
        self.index_of(year).map(|i| self.rho[i])
    }

    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|c| *c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    /// Step length in years; `1/dt` must be an integer.
    pub dt: f64,
    /// Holds `r` at this value for the whole epidemic instead of following the trend.
    pub fixed_r: Option<f64>,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            dt: DEFAULT_DT,
            fixed_r: None,
        }
    }
}

/// One step of the r-trend.
///
/// `rho_next` is prevalence one step of length `dt` ahead. The relative
/// prevalence change is annualized by `1/dt` and the whole log-increment is
/// scaled by `dt`, so `dt = 1` reproduces the yearly recursion exactly.
pub fn r_trend_step(r_t: f64, rho_t: f64, rho_next: f64, t: f64, theta: &Theta, dt: f64) -> Result<f64> {
    if ![r_t, rho_t, rho_next, t, dt].iter().all(|v| v.is_finite()) || !theta.is_finite() {
        return Err(Error::NonFinite {
            time: t,
            theta: theta.to_string(),
        });
    }
    let stabilization = theta.t0_rounded() + theta.t1_rounded();
    let gamma = if rho_t > 0.0 {
        ((rho_next - rho_t) / dt) * (t - stabilization).max(0.0) / rho_t
    } else {
        0.0
    };
    let increment = theta.beta1 * (theta.beta0 - r_t) - theta.beta2 * rho_t + theta.beta3 * gamma;
    Ok(r_t * (dt * increment).exp())
}

/// State at the (rounded) epidemic start for a population of `n_init`.
pub fn initial_state(theta: &Theta, demog: &DemographicSchedule) -> EpiState {
    seed_epidemic(theta.t0_rounded(), demog.n_init, theta.r0())
}

fn seed_epidemic(t: f64, population: f64, r: f64) -> EpiState {
    let y = SEED_PREVALENCE * population;
    EpiState {
        z: population - y,
        y,
        r,
        t,
    }
}

pub fn project_epidemic(
    theta: &Theta,
    demog: &DemographicSchedule,
    start_year: i32,
    end_year: i32,
) -> Result<Projection> {
    project_with(theta, demog, start_year, end_year, &ProjectionOptions::default())
}

pub fn project_with(
    theta: &Theta,
    demog: &DemographicSchedule,
    start_year: i32,
    end_year: i32,
    opts: &ProjectionOptions,
) -> Result<Projection> {
    let steps_per_year = (1.0 / opts.dt).round() as i64;
    if steps_per_year < 1 || ((steps_per_year as f64) * opts.dt - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "time step {} does not divide a year",
            opts.dt
        )));
    }
    if end_year < start_year {
        return Err(Error::InvalidParameter("end year precedes start year".into()));
    }
    if !theta.is_finite() {
        return Err(Error::NonFinite {
            time: start_year as f64,
            theta: theta.to_string(),
        });
    }
    let spy = steps_per_year;
    let dt = 1.0 / spy as f64;
    let sim_start = start_year.max(EARLIEST_START);
    let t0 = theta.t0_rounded();
    let seed_step = ((t0 - sim_start as f64) * spy as f64).round() as i64;
    if seed_step < 0 {
        return Err(Error::InvalidParameter(format!(
            "epidemic start {t0} precedes simulation start {sim_start}"
        )));
    }

    let n_years = (end_year - start_year + 1) as usize;
    let mut proj = Projection {
        years: (start_year..=end_year).collect(),
        rho: vec![0.0; n_years],
        incidence: vec![0.0; n_years],
        r_series: vec![0.0; n_years],
        y_series: vec![0.0; n_years],
        n_series: vec![demog.n_init; n_years],
        clamped: vec![false; n_years],
    };
    if sim_start > end_year {
        return Ok(proj);
    }

    let growth_z = demog.mu + demog.a50 - demog.m;
    let growth_y = demog.delta + demog.a50 - demog.m;
    let mut state = EpiState {
        z: demog.n_init,
        y: 0.0,
        r: 0.0,
        t: sim_start as f64,
    };
    let mut started = false;
    let mut clamped = false;
    let mut new_infections = 0.0;
    let mut susceptible_time = 0.0;
    let total_steps = (end_year - sim_start + 1) as i64 * spy;
    let year_offset = (sim_start - start_year) as usize;

    for k in 0..total_steps {
        let t = sim_start as f64 + k as f64 / spy as f64;
        if k == seed_step {
            let r = opts.fixed_r.unwrap_or_else(|| theta.r0());
            state = seed_epidemic(t, state.z + state.y, r);
            started = true;
        }
        let n = state.z + state.y;
        let rho = state.prevalence();
        if k % spy == 0 {
            let i = year_offset + (k / spy) as usize;
            proj.rho[i] = rho;
            proj.r_series[i] = state.r;
            proj.y_series[i] = state.y;
            proj.n_series[i] = n;
            new_infections = 0.0;
            susceptible_time = 0.0;
        }

        let infections = if started { state.r * rho * state.z } else { 0.0 };
        let dz = demog.entry_rate * n - infections - growth_z * state.z;
        let dy = infections - growth_y * state.y;
        let mut z1 = state.z + dt * dz;
        let mut y1 = state.y + dt * dy;
        new_infections += dt * infections;
        susceptible_time += dt * state.z;
        if z1 < 0.0 {
            z1 = 0.0;
            clamped = true;
        }
        if y1 < 0.0 {
            y1 = 0.0;
            clamped = true;
        }
        if !(z1.is_finite() && y1.is_finite()) {
            return Err(Error::NonFinite {
                time: t,
                theta: theta.to_string(),
            });
        }

        let r1 = if started && opts.fixed_r.is_none() {
            let n1 = z1 + y1;
            let rho_next = if n1 > 0.0 { y1 / n1 } else { 0.0 };
            let r1 = r_trend_step(state.r, rho, rho_next, t, theta, dt)?;
            if !r1.is_finite() {
                return Err(Error::NonFinite {
                    time: t,
                    theta: theta.to_string(),
                });
            }
            r1
        } else {
            state.r
        };
        state = EpiState {
            z: z1,
            y: y1,
            r: r1,
            t: t + dt,
        };

        if (k + 1) % spy == 0 {
            let i = year_offset + (k / spy) as usize;
            proj.incidence[i] = if susceptible_time > 0.0 {
                new_infections / susceptible_time
            } else {
                0.0
            };
            proj.clamped[i] = clamped;
        }
    }
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn prior_mean() -> Theta {
        Theta::from_array([1980.0, 20.0, 0.42, 0.46, 0.17, -0.68, -0.038, 0.14])
    }

    #[test]
    fn trend_fixed_point_without_prevalence() {
        let th = prior_mean();
        let r = r_trend_step(th.beta0, 0.0, 0.0, 1975.0, &th, 0.1).unwrap();
        assert_eq!(r, th.beta0);
        let r = r_trend_step(th.beta0, 0.0, 0.3, 2030.0, &th, 1.0).unwrap();
        assert_eq!(r, th.beta0);
    }

    #[test]
    fn trend_at_prior_means() {
        let th = prior_mean();
        let r = r_trend_step(0.46, 0.1, 0.1, 1990.0, &th, 1.0).unwrap();
        assert_relative_eq!(r, 0.46 * 0.068f64.exp(), epsilon = 1e-12);
        assert_relative_eq!(r, 0.49236, epsilon = 1e-5);
    }

    #[test]
    fn trend_stabilization_term() {
        let th = Theta {
            beta1: 0.0,
            beta2: 0.0,
            ..prior_mean()
        };
        let t = th.t0_rounded() + th.t1_rounded() + 2.0;
        let r = r_trend_step(0.5, 0.10, 0.11, t, &th, 1.0).unwrap();
        assert_relative_eq!((r / 0.5).ln(), th.beta3 * 0.2, epsilon = 1e-12);
    }

    #[test]
    fn trend_rejects_non_finite() {
        let th = prior_mean();
        assert!(r_trend_step(f64::NAN, 0.1, 0.1, 1990.0, &th, 0.1).is_err());
        assert!(r_trend_step(0.4, 0.1, f64::INFINITY, 1990.0, &th, 0.1).is_err());
    }

    #[test]
    fn seeding_counts() {
        let th = prior_mean();
        let s = initial_state(&th, &DemographicSchedule::default());
        assert_relative_eq!(s.y, 25.0, epsilon = 1e-9);
        assert_relative_eq!(s.z, 999_975.0, epsilon = 1e-9);
        let d = DemographicSchedule {
            n_init: 4e5,
            ..Default::default()
        };
        assert_relative_eq!(initial_state(&th, &d).y, 10.0, epsilon = 1e-9);
        assert_eq!(s.r, th.r0());
    }

    #[test]
    fn zero_before_start_and_seed_at_start() {
        let th = Theta {
            t0: 1983.0,
            ..prior_mean()
        };
        let p = project_epidemic(&th, &DemographicSchedule::default(), 1970, 2015).unwrap();
        for (yr, rho) in p.years.iter().zip(&p.rho) {
            if *yr < 1983 {
                assert_eq!(*rho, 0.0);
            }
        }
        assert_relative_eq!(p.prevalence_at(1983).unwrap(), SEED_PREVALENCE, epsilon = 1e-15);
    }

    #[test]
    fn no_transmission_decays() {
        let th = prior_mean();
        let opts = ProjectionOptions {
            fixed_r: Some(0.0),
            ..Default::default()
        };
        let p = project_with(&th, &DemographicSchedule::default(), 1970, 2010, &opts).unwrap();
        let start = p.index_of(1980).unwrap();
        assert_relative_eq!(p.rho[start], SEED_PREVALENCE, epsilon = 1e-15);
        for w in p.rho[start..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn prior_mean_rises_then_stabilizes() {
        let p = project_epidemic(&prior_mean(), &DemographicSchedule::default(), 1970, 2015).unwrap();
        assert!(!p.any_clamped());
        let at = |y| p.prevalence_at(y).unwrap();
        assert!(at(1995) > at(1985));
        assert!((at(2010) - at(2009)).abs() < (at(1995) - at(1994)).abs());
        assert!(p.rho.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn grid_refinement_is_consistent() {
        let d = DemographicSchedule::default();
        let coarse = project_epidemic(&prior_mean(), &d, 1970, 2015).unwrap();
        let fine = project_with(
            &prior_mean(),
            &d,
            1970,
            2015,
            &ProjectionOptions {
                dt: 0.05,
                fixed_r: None,
            },
        )
        .unwrap();
        // Forward Euler carries O(dt) error through the exponential growth
        // phase; compare from the stabilization year on.
        let from = coarse.index_of(2000).unwrap();
        for (a, b) in coarse.rho[from..].iter().zip(&fine.rho[from..]) {
            {
                assert!((a - b).abs() / b < 0.01, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let d = DemographicSchedule::default();
        let a = project_epidemic(&prior_mean(), &d, 1970, 2015).unwrap();
        let b = project_epidemic(&prior_mean(), &d, 1970, 2015).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exploding_trend_is_an_error_or_clamps() {
        let th = Theta {
            beta1: -40.0,
            ..prior_mean()
        };
        match project_epidemic(&th, &DemographicSchedule::default(), 1970, 2015) {
            Err(Error::NonFinite { theta, .. }) => assert!(theta.contains("beta1=-40")),
            Ok(p) => assert!(p.any_clamped()),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn years_before_1970_are_padded() {
        let p = project_epidemic(&prior_mean(), &DemographicSchedule::default(), 1965, 1990).unwrap();
        assert_eq!(p.start_year(), 1965);
        assert_eq!(p.prevalence_at(1968), Some(0.0));
        assert!(p.prevalence_at(1990).unwrap() > 0.0);
    }
}
