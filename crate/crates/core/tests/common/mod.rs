//! Independent numerical oracles shared by the integration tests. Nothing here
//! calls into the library's own kernels.
#![allow(dead_code)]

use demma_core::distributions::{GpInvariantParams, LogNormalParams};
use demma_core::mixture::MixtureParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simpson(_f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(f, a, m, fa, flm, fm);
    let right = simpson(f, m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(&f, a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// erf from its integral definition.
pub fn erf_oracle(x: f64) -> f64 {
    let c = 2.0 / std::f64::consts::PI.sqrt();
    let sign = x.signum();
    sign * integrate(|t| c * (-t * t).exp(), 0.0, x.abs(), 1e-15)
}

/// Root of an increasing function `f(x) = target` on `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Inverse-transform GP(ξ, σ) exceedances.
pub fn gp_sample(xi: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if xi == 0.0 {
                -sigma * (1.0 - u).ln()
            } else {
                sigma / xi * ((1.0 - u).powf(-xi) - 1.0)
            }
        })
        .collect()
}

/// GP log-likelihood written out directly. The log terms are taken of
/// products of 16 factors at a time, which keeps a 200 × 200 grid over 10⁵
/// points affordable without changing the value beyond rounding.
pub fn gp_loglik_oracle(z: &[f64], xi: f64, sigma: f64) -> f64 {
    let n = z.len() as f64;
    let r = xi / sigma;
    let mut s = 0.0;
    for chunk in z.chunks(16) {
        let mut prod = 1.0;
        for &v in chunk {
            let t = 1.0 + r * v;
            if t <= 0.0 {
                return f64::NEG_INFINITY;
            }
            prod *= t;
        }
        s += prod.ln();
    }
    -n * sigma.ln() - (1.0 + 1.0 / xi) * s
}

/// p0 = 0.4, log-normal(1, 0.5) body, GP tail ξ = 0.2, σ₀ = 3 grafted at
/// u* = 15 with 10% of the mass above it.
pub fn truth_mixture() -> MixtureParams {
    let zeta0 = 0.1 * (1.0 + 0.2 * 15.0 / 3.0_f64).powf(1.0 / 0.2);
    MixtureParams::from_components(
        0.4,
        LogNormalParams::new(1.0, 0.5).unwrap(),
        GpInvariantParams::new(0.2, 3.0, zeta0).unwrap(),
        15.0,
    )
    .unwrap()
}
