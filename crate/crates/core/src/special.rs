//! Error function family.
//!
//! `erf` uses the positive-term series `2/√π · e^{-x²} · Σ 2ⁿx^{2n+1}/(2n+1)!!`
//! below |x| = 2 and a Lentz continued fraction for `erfc` above it, which
//! keeps absolute error near machine epsilon and relative error of `erfc`
//! small deep into the tail. The inverses are Newton iterations guarded by
//! bisection.

use crate::error::{Error, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const SERIES_LIMIT: f64 = 2.0;

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// `erfc(x)` for `x >= SERIES_LIMIT` via the continued fraction
/// `e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

/// The error function `(2/√π)∫₀ˣ e^{-t²} dt`.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax < SERIES_LIMIT {
        erf_series(ax)
    } else {
        1.0 - erfc_continued_fraction(ax)
    };
    v.copysign(x)
}

/// Complementary error function `1 - erf(x)`, accurate in relative terms
/// for large positive `x`.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < SERIES_LIMIT {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

/// Inverse of [`erf`] on (-1, 1).
pub fn erf_inv(p: f64) -> Result<f64> {
    if !(p > -1.0 && p < 1.0) {
        return Err(Error::Domain(format!("erf_inv requires -1 < p < 1, got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    // In the tails the complementary form keeps the residual well conditioned.
    if p.abs() > 0.5 {
        let x = erfc_inv(1.0 - p.abs())?;
        return Ok(x.copysign(p));
    }
    let target = p.abs();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = target * std::f64::consts::PI.sqrt() / 2.0;
    for _ in 0..100 {
        let r = erf(x) - target;
        if r > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let step = r / (FRAC_2_SQRT_PI * (-x * x).exp());
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x.abs().max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x.copysign(p))
}

/// Inverse of [`erfc`] on (0, 2).
pub fn erfc_inv(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 2.0) {
        return Err(Error::Domain(format!("erfc_inv requires 0 < q < 2, got {q}")));
    }
    if q > 1.0 {
        return Ok(-erfc_inv(2.0 - q)?);
    }
    if q == 1.0 {
        return Ok(0.0);
    }
    // Newton on g(x) = ln erfc(x) - ln q, bracketed on [0, 27].
    let target = q.ln();
    let (mut lo, mut hi) = (0.0_f64, 27.0_f64);
    let mut x = if q < 0.1 {
        (-q.ln()).sqrt()
    } else {
        0.5 * (1.0 - q) * std::f64::consts::PI.sqrt()
    };
    for _ in 0..200 {
        let e = erfc(x);
        let g = e.ln() - target;
        if g > 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let dg = -FRAC_2_SQRT_PI * (-x * x).exp() / e;
        let mut next = x - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4e-16 * x.abs().max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}
