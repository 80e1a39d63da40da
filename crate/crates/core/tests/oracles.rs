//! Closed-form and Monte Carlo references for the projection and likelihood.

use approx::assert_relative_eq;
use epimix_core::likelihood::{anc_log_likelihood, AncDataset, AncObservation, RandomEffectPrior};
use epimix_core::model::{project_with, ProjectionOptions};
use epimix_core::numeric::{log_sum_exp, norm_quantile};
use epimix_core::{DemographicSchedule, Projection, Theta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

fn closed_population() -> DemographicSchedule {
    DemographicSchedule { mu: 0.0, a50: 0.0, m: 0.0, entry_rate: 0.0, delta: 0.0, n_init: 1e6 }
}

#[test]
fn constant_r_without_demography_is_logistic() {
    let theta = Theta { t0: 1975.0, t1: 20.0, log_r0: 0.0, beta0: 0.0, beta1: 0.0, beta2: 0.0, beta3: 0.0, beta4: 0.0 };
    let r = 0.6;
    let opts = ProjectionOptions { dt: 0.001, fixed_r: Some(r) };
    let p = project_with(&theta, &closed_population(), 1970, 2005, &opts).unwrap();
    let rho0 = 2.5e-5;
    for (&year, &rho) in p.years.iter().zip(&p.rho) {
        let t = year as f64 - 1975.0;
        let exact = if t < 0.0 { 0.0 } else { 1.0 / (1.0 + (1.0 - rho0) / rho0 * (-r * t).exp()) };
        if exact == 0.0 {
            assert_eq!(rho, 0.0);
        } else {
            assert_relative_eq!(rho, exact, max_relative = 5e-3);
        }
    }
    // Population is conserved exactly.
    assert!(p.n_series.iter().all(|n| (n - 1e6).abs() < 1e-6));
}

#[test]
fn no_infection_decays_exponentially() {
    let theta = Theta { t0: 1980.0, t1: 20.0, log_r0: 0.0, beta0: 0.0, beta1: 0.0, beta2: 0.0, beta3: 0.0, beta4: 0.0 };
    let demog = DemographicSchedule { delta: 0.1, ..closed_population() };
    let opts = ProjectionOptions { dt: 0.001, fixed_r: Some(0.0) };
    let p = project_with(&theta, &demog, 1980, 2000, &opts).unwrap();
    for (i, &y) in p.y_series.iter().enumerate() {
        assert_relative_eq!(y, 25.0 * (-0.1 * i as f64).exp(), max_relative = 1e-3);
    }
}

fn flat_projection(years: std::ops::RangeInclusive<i32>, rho: &[f64]) -> Projection {
    let years: Vec<i32> = years.collect();
    let n = years.len();
    Projection {
        years,
        rho: rho.to_vec(),
        incidence: vec![0.0; n],
        r_series: vec![0.0; n],
        y_series: vec![0.0; n],
        n_series: vec![1.0; n],
        clamped: vec![false; n],
    }
}

fn counts() -> AncDataset {
    let obs = [("a", 2000, 12, 200), ("a", 2001, 17, 200), ("a", 2002, 21, 220), ("b", 2000, 25, 180), ("b", 2002, 30, 150)];
    AncDataset::new(
        "x",
        obs.iter().map(|&(c, year, y, n)| AncObservation { clinic_id: c.into(), year, y, n }).collect(),
    )
    .unwrap()
}

/// Average of the conditional Gaussian likelihood over clinic effects drawn
/// from `draw_var`.
fn mc_log_likelihood(proj: &Projection, data: &AncDataset, draws: usize, mut draw_var: impl FnMut(&mut ChaCha20Rng) -> f64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let pts: Vec<(usize, usize, f64, f64)> = data
        .observations
        .iter()
        .map(|o| {
            let p = epimix_core::likelihood::probit_counts(o.y, o.n);
            let clinic = if o.clinic_id == "a" { 0 } else { 1 };
            (clinic, (o.year - 2000) as usize, p.w, p.nu)
        })
        .collect();
    let mut terms = Vec::with_capacity(draws);
    for _ in 0..draws {
        let var = draw_var(&mut rng);
        let b: [f64; 2] = [0, 1].map(|_| var.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let ll: f64 = pts
            .iter()
            .map(|&(c, i, w, nu)| {
                let e = w - norm_quantile(proj.rho[i]) - b[c];
                -0.5 * (2.0 * std::f64::consts::PI * nu).ln() - 0.5 * e * e / nu
            })
            .sum();
        terms.push(ll);
    }
    log_sum_exp(&terms) - (draws as f64).ln()
}

#[test]
fn fixed_variance_matches_monte_carlo() {
    let proj = flat_projection(2000..=2002, &[0.08, 0.09, 0.11]);
    let data = counts();
    let prior = RandomEffectPrior::Fixed { variance: 0.04 };
    let exact = anc_log_likelihood(&proj, 0.0, &data, &prior).unwrap();
    let mc = mc_log_likelihood(&proj, &data, 1_000_000, |_| 0.04);
    assert_relative_eq!(exact.exp(), mc.exp(), max_relative = 5e-3);
}


#[test]
fn inverse_gamma_quadrature_matches_monte_carlo() {
    let proj = flat_projection(2000..=2002, &[0.07, 0.085, 0.1]);
    let data = counts();
    let prior = RandomEffectPrior::default();
    let exact = anc_log_likelihood(&proj, 0.0, &data, &prior).unwrap();
    // Precision ~ Gamma(0.58, 93) restricted to log σ² ∈ [-15, 5]. The heavy
    // σ² tail leaves 1e6 draws with ~0.6% error, so use 1e7.
    let gamma = Gamma::new(0.58, 93.0).unwrap();
    let mc = mc_log_likelihood(&proj, &data, 10_000_000, |rng| loop {
        let v: f64 = 1.0 / gamma.sample(rng);
        if (-15.0..=5.0).contains(&v.ln()) {
            break v;
        }
    });
    assert_relative_eq!(exact.exp(), mc.exp(), max_relative = 5e-3);
}
