mod common;

use common::*;
use demma_core::distributions::*;
use demma_core::special::{erf, erf_inv};

#[test]
fn erf_matches_integral_definition() {
    let mut worst: f64 = 0.0;
    for i in -60..=60 {
        let x = i as f64 * 0.1;
        worst = worst.max((erf(x) - erf_oracle(x)).abs());
    }
    assert!(worst <= 1e-12, "worst |erf - oracle| = {worst:e}");
    assert!((erf(1.0) - 0.842700792949).abs() < 1e-12);
    assert_eq!(erf(0.0), 0.0);
    assert_eq!(erf(0.7), -erf(-0.7));
}

#[test]
fn erf_inverse_examples() {
    assert_eq!(erf_inv(0.0).unwrap(), 0.0);
    assert!((erf_inv(erf(0.5)).unwrap() - 0.5).abs() < 1e-10);
    assert!((erf_inv(0.842700792949).unwrap() - 1.0).abs() < 1e-9);
    for p in [-0.999999, -0.3, 0.01, 0.5, 0.9, 0.99999999] {
        assert!((erf(erf_inv(p).unwrap()) - p).abs() < 1e-10);
    }
    assert!(erf_inv(1.0).is_err() && erf_inv(-1.5).is_err());
}

#[test]
fn lognormal_cdf_examples() {
    let std = LogNormalParams::new(0.0, 1.0).unwrap();
    // Φ(1) by integrating the normal density
    let phi1 = 0.5 + integrate(|t| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(), 0.0, 1.0, 1e-15);
    assert!((lognormal_cdf(std::f64::consts::E, &std).unwrap() - phi1).abs() < 1e-12);
    assert!((phi1 - 0.841344746).abs() < 1e-9);
    let p = LogNormalParams::new(1.3, 0.4).unwrap();
    assert!((lognormal_cdf(1.3f64.exp(), &p).unwrap() - 0.5).abs() < 1e-15);
    assert!(lognormal_cdf(1e-30, &p).unwrap() < 1e-100);
    assert!(lognormal_cdf(0.0, &p).is_err());
}

#[test]
fn gp_cdf_examples() {
    let p = GpThresholdParams::new(0.0, 2.0, 1.0, 10.0).unwrap();
    assert!((gp_cdf_threshold(12.0, &p).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    assert_eq!(gp_cdf_threshold(10.0, &p).unwrap(), 0.0);
    assert!(gp_cdf_threshold(9.0, &p).is_err());
    let p = GpThresholdParams::new(0.5, 1.0, 1.0, 0.0).unwrap();
    assert!((gp_cdf_threshold(1.0, &p).unwrap() - 5.0 / 9.0).abs() < 1e-15);

    let inv = GpInvariantParams::new(0.0, 3.0, 0.5).unwrap();
    assert_eq!(gp_cdf_invariant(0.0, &inv).unwrap(), 0.5);
    assert!((gp_cdf_invariant(3.0 * 2f64.ln(), &inv).unwrap() - 0.75).abs() < 1e-15);
    assert!((gp_quantile_invariant(0.75, &inv).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn conversion_example_and_consistency() {
    let thr = GpThresholdParams::new(0.2, 5.0, 0.1, 10.0).unwrap();
    let inv = convert_to_invariant(&thr).unwrap();
    assert!((inv.scale0 - 3.0).abs() < 1e-15);
    assert!((inv.zeta0 - 0.1 * (5.0f64 / 3.0).powi(5)).abs() < 1e-12);
    assert!((inv.zeta0 - 1.2860082).abs() < 1e-7);
    let rounded = GpInvariantParams::new(0.2, 3.0, 1.28601).unwrap();
    assert!((gp_cdf_invariant(10.0, &rounded).unwrap() - 0.9).abs() < 1e-4);

    let zero = GpThresholdParams::new(0.3, 2.0, 0.7, 0.0).unwrap();
    let same = convert_to_invariant(&zero).unwrap();
    assert_eq!((same.shape, same.scale0, same.zeta0), (0.3, 2.0, 0.7));

    assert!(matches!(
        convert_to_invariant(&GpThresholdParams::new(0.5, 2.0, 0.1, 10.0).unwrap()),
        Err(demma_core::Error::InvalidParameters(_))
    ));
}

#[test]
fn quantile_matches_bisection() {
    let p = GpInvariantParams::new(0.2, 3.0, 1.2860082).unwrap();
    for q in [0.5, 0.9, 0.95, 0.99, 0.999, 0.99999] {
        let y = gp_quantile_invariant(q, &p).unwrap();
        let oracle = bisect(|y| gp_cdf_invariant(y, &p).unwrap(), q, 0.0, 1e9);
        assert!((y - oracle).abs() <= 1e-9 * oracle.max(1.0), "q={q}: {y} vs {oracle}");
        assert!((gp_cdf_invariant(y, &p).unwrap() - q).abs() < 1e-9);
    }
}

#[test]
fn mle_recovers_exponential() {
    let z = gp_sample(0.0, 2.0, 100_000, 21);
    let fit = gp_fit_mle(&z, DEFAULT_MIN_EXCEEDANCES).unwrap();
    assert!(fit.shape.abs() <= 0.03, "{fit:?}");
    assert!((1.94..=2.06).contains(&fit.scale), "{fit:?}");
}

/// Best value of the log-likelihood on a 200 × 200 grid around the truth.
pub fn grid_oracle(z: &[f64]) -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..200 {
        let xi = 0.2 + 0.2 * i as f64 / 199.0;
        for j in 0..200 {
            let sigma = 0.85 + 0.3 * j as f64 / 199.0;
            let l = gp_loglik_oracle(z, xi, sigma);
            if l > best.0 {
                best = (l, xi, sigma);
            }
        }
    }
    best
}

#[test]
fn mle_recovers_gp_and_beats_grid() {
    let z = gp_sample(0.3, 1.0, 100_000, 8);
    let fit = gp_fit_mle(&z, DEFAULT_MIN_EXCEEDANCES).unwrap();
    assert!((0.27..=0.33).contains(&fit.shape), "{fit:?}");
    assert!((0.95..=1.05).contains(&fit.scale), "{fit:?}");
    let (grid_best, _, _) = grid_oracle(&z);
    let at_fit = gp_loglik_oracle(&z, fit.shape, fit.scale);
    assert!(at_fit >= grid_best, "fit {at_fit} < grid {grid_best}");
    assert!((fit.loglik - at_fit).abs() < 1e-6 * at_fit.abs());
}

#[test]
fn mle_rejects_small_samples() {
    let z = gp_sample(0.1, 1.0, 29, 1);
    assert!(matches!(gp_fit_mle(&z, 30), Err(demma_core::Error::InsufficientData(_))));
}
