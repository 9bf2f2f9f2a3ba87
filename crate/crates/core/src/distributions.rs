//! Probability kernels: log-normal and the Generalized Pareto (GP) law in
//! its threshold-dependent and threshold-independent parameterizations,
//! plus maximum-likelihood fitting of GP exceedances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::special::{erfc, erfc_inv};

/// Below this magnitude the shape parameter is treated as exactly zero.
pub const SHAPE_ZERO_TOL: f64 = 1e-8;

/// GP parameters attached to a particular threshold `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpThresholdParams {
    pub shape: f64,
    pub scale: f64,
    /// Probability of exceeding the threshold.
    pub exceed_prob: f64,
    pub threshold: f64,
}

impl GpThresholdParams {
    pub fn new(shape: f64, scale: f64, exceed_prob: f64, threshold: f64) -> Result<Self> {
        let p = Self {
            shape,
            scale,
            exceed_prob,
            threshold,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape.is_finite() && self.scale.is_finite() && self.threshold.is_finite()) {
            return Err(Error::InvalidParameters(format!("non-finite GP parameters {self:?}")));
        }
        if self.scale <= 0.0 {
            return Err(Error::InvalidParameters(format!("GP scale must be > 0, got {}", self.scale)));
        }
        if !(self.exceed_prob > 0.0 && self.exceed_prob <= 1.0) {
            return Err(Error::InvalidParameters(format!(
                "exceedance probability must lie in (0, 1], got {}",
                self.exceed_prob
            )));
        }
        if self.threshold < 0.0 {
            return Err(Error::InvalidParameters(format!(
                "threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Finite upper end of the support when the shape is negative.
    pub fn upper_endpoint(&self) -> Option<f64> {
        (self.shape < -SHAPE_ZERO_TOL).then(|| self.threshold - self.scale / self.shape)
    }
}

/// Threshold-independent GP parameters `(ξ, σ₀, ζ₀)`.
///
/// `zeta0` is a parameter rather than a probability and may exceed one;
/// the tail formula is only evaluated above the mixture threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpInvariantParams {
    pub shape: f64,
    pub scale0: f64,
    pub zeta0: f64,
}

impl GpInvariantParams {
    pub fn new(shape: f64, scale0: f64, zeta0: f64) -> Result<Self> {
        let p = Self { shape, scale0, zeta0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape.is_finite() && self.scale0.is_finite() && self.zeta0.is_finite()) {
            return Err(Error::InvalidParameters(format!("non-finite GP parameters {self:?}")));
        }
        if self.scale0 <= 0.0 || self.zeta0 <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "scale0 and zeta0 must be > 0, got {} and {}",
                self.scale0, self.zeta0
            )));
        }
        Ok(())
    }

    pub fn upper_endpoint(&self) -> Option<f64> {
        (self.shape < -SHAPE_ZERO_TOL).then(|| -self.scale0 / self.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "log-normal needs finite mu and sigma > 0, got ({mu}, {sigma})"
            )));
        }
        Ok(Self { mu, sigma })
    }
}

/// `(1 + ξz)^(-1/ξ)` with the exponential limit near ξ = 0; zero at and
/// past a finite upper endpoint.
fn gp_tail_factor(shape: f64, z: f64) -> f64 {
    if shape.abs() < SHAPE_ZERO_TOL {
        return (-z).exp();
    }
    let arg = shape * z;
    if 1.0 + arg <= 0.0 {
        return 0.0;
    }
    (-arg.ln_1p() / shape).exp()
}

pub fn lognormal_cdf(y: f64, p: &LogNormalParams) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("log-normal CDF requires y > 0, got {y}")));
    }
    let z = (y.ln() - p.mu) / (p.sigma * std::f64::consts::SQRT_2);
    Ok(0.5 * erfc(-z))
}

pub fn lognormal_ln_pdf(y: f64, p: &LogNormalParams) -> f64 {
    if !(y > 0.0) {
        return f64::NEG_INFINITY;
    }
    let ly = y.ln();
    let z = (ly - p.mu) / p.sigma;
    -ly - p.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
}

/// Inverse of [`lognormal_cdf`] for `v` in (0, 1).
pub fn lognormal_quantile(v: f64, p: &LogNormalParams) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Domain(format!("log-normal quantile requires 0 < v < 1, got {v}")));
    }
    // v = erfc(-x)/2  =>  x = -erfc_inv(2v)
    let x = -erfc_inv(2.0 * v)?;
    Ok((p.mu + p.sigma * std::f64::consts::SQRT_2 * x).exp())
}

/// Classical GP CDF of exceedances over `p.threshold`.
pub fn gp_cdf_threshold(y: f64, p: &GpThresholdParams) -> Result<f64> {
    if !(y >= p.threshold) {
        return Err(Error::Domain(format!(
            "GP CDF evaluated below its threshold: y = {y} < u = {}",
            p.threshold
        )));
    }
    let z = (y - p.threshold) / p.scale;
    Ok(1.0 - gp_tail_factor(p.shape, z))
}

/// Tail probability `ζ₀(1 + ξy/σ₀)^(-1/ξ)` of the threshold-independent form.
pub fn gp_survival_invariant(y: f64, p: &GpInvariantParams) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("invariant GP evaluated at y = {y} < 0")));
    }
    Ok(p.zeta0 * gp_tail_factor(p.shape, y / p.scale0))
}

pub fn gp_cdf_invariant(y: f64, p: &GpInvariantParams) -> Result<f64> {
    gp_survival_invariant(y, p).map(|s| 1.0 - s)
}

/// Density of the threshold-independent form, `dF/dy`.
pub fn gp_density_invariant(y: f64, p: &GpInvariantParams) -> Result<f64> {
    let s = gp_survival_invariant(y, p)?;
    Ok(if s > 0.0 { s / (p.scale0 + p.shape * y) } else { 0.0 })
}

/// Analytic inverse of [`gp_cdf_invariant`].
pub fn gp_quantile_invariant(q: f64, p: &GpInvariantParams) -> Result<f64> {
    let lower = (1.0 - p.zeta0).max(0.0);
    if !(q >= lower && q < 1.0) {
        return Err(Error::Domain(format!(
            "GP quantile level must lie in [{lower}, 1), got {q}"
        )));
    }
    let ln_r = ((1.0 - q) / p.zeta0).ln();
    let y = if p.shape.abs() < SHAPE_ZERO_TOL {
        -p.scale0 * ln_r
    } else {
        p.scale0 * (-p.shape * ln_r).exp_m1() / p.shape
    };
    Ok(y.max(0.0))
}

/// The two algebraically equivalent expressions for `ζ₀`:
/// `ζᵤ(1 + ξu/σ₀)^{1/ξ}` and `ζᵤ(1 − ξu/σᵤ)^{−1/ξ}`.
pub fn zeta0_forms(p: &GpThresholdParams) -> Result<(f64, f64)> {
    let scale0 = p.scale - p.shape * p.threshold;
    if scale0 <= 0.0 {
        return Err(Error::InvalidParameters(format!(
            "sigma_u - xi*u must be > 0, got {scale0}"
        )));
    }
    let u = p.threshold;
    if p.shape.abs() < SHAPE_ZERO_TOL {
        return Ok((
            p.exceed_prob * (u / scale0).exp(),
            p.exceed_prob * (u / p.scale).exp(),
        ));
    }
    let a = p.exceed_prob * ((p.shape * u / scale0).ln_1p() / p.shape).exp();
    let b = p.exceed_prob * (-(-p.shape * u / p.scale).ln_1p() / p.shape).exp();
    Ok((a, b))
}

/// Converts threshold-bound parameters into the threshold-independent form.
pub fn convert_to_invariant(p: &GpThresholdParams) -> Result<GpInvariantParams> {
    p.validate()?;
    let scale0 = p.scale - p.shape * p.threshold;
    let (zeta0, _) = zeta0_forms(p)?;
    GpInvariantParams::new(p.shape, scale0, zeta0)
}

/// Parameters of the classical GP law implied at threshold `u`:
/// `σᵤ = σ₀ + ξu`, `ζᵤ` = tail probability at `u`.
pub fn convert_to_threshold(p: &GpInvariantParams, u: f64) -> Result<GpThresholdParams> {
    let exceed_prob = gp_survival_invariant(u, p)?;
    GpThresholdParams::new(p.shape, p.scale0 + p.shape * u, exceed_prob, u)
}

/// GP log-likelihood of exceedances `z` (all > 0) under `(ξ, σ)`;
/// `-∞` outside the feasible set.
pub fn gp_log_likelihood(exceedances: &[f64], shape: f64, scale: f64) -> f64 {
    if !(scale > 0.0) || !shape.is_finite() {
        return f64::NEG_INFINITY;
    }
    let n = exceedances.len() as f64;
    if shape.abs() < SHAPE_ZERO_TOL {
        let s: f64 = exceedances.iter().sum();
        return -n * scale.ln() - s / scale;
    }
    let ratio = shape / scale;
    let mut acc = 0.0;
    for &z in exceedances {
        let t = ratio * z;
        if 1.0 + t <= 1e-12 {
            return f64::NEG_INFINITY;
        }
        acc += t.ln_1p();
    }
    -n * scale.ln() - (1.0 + 1.0 / shape) * acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpFit {
    pub shape: f64,
    pub scale: f64,
    pub loglik: f64,
    pub iterations: usize,
}

/// Probability-weighted-moment estimates `(ξ, σ)`, used as the MLE start.
pub fn gp_pwm_estimate(exceedances: &[f64]) -> (f64, f64) {
    let mut sorted = exceedances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let (mut a0, mut a1) = (0.0, 0.0);
    for (i, &x) in sorted.iter().enumerate() {
        let p = (i as f64 + 0.65) / n;
        a0 += x;
        a1 += (1.0 - p) * x;
    }
    a0 /= n;
    a1 /= n;
    let denom = a0 - 2.0 * a1;
    if denom <= 0.0 {
        return (0.0, a0.max(f64::MIN_POSITIVE));
    }
    let k = a0 / denom - 2.0;
    let scale = 2.0 * a0 * a1 / denom;
    (-k, scale)
}

pub const DEFAULT_MIN_EXCEEDANCES: usize = 30;

/// Maximum-likelihood GP fit by Nelder–Mead on `(ξ, ln σ)`.
pub fn gp_fit_mle(exceedances: &[f64], min_samples: usize) -> Result<GpFit> {
    if exceedances.len() < min_samples.max(2) {
        return Err(Error::InsufficientData(format!(
            "GP fit needs at least {} exceedances, got {}",
            min_samples.max(2),
            exceedances.len()
        )));
    }
    if let Some(bad) = exceedances.iter().find(|z| !(z.is_finite() && **z > 0.0)) {
        return Err(Error::Domain(format!("exceedances must be finite and > 0, found {bad}")));
    }
    let n = exceedances.len() as f64;
    let (xi0, sigma0) = gp_pwm_estimate(exceedances);
    let mut xi0 = xi0.clamp(-0.45, 0.9);
    let zmax = exceedances.iter().copied().fold(0.0, f64::max);
    let mut sigma0 = sigma0.max(1e-12);
    // pull the start back inside the support when the PWM shape is negative
    while 1.0 + xi0 * zmax / sigma0 <= 1e-3 {
        xi0 *= 0.5;
        if xi0.abs() < 1e-3 {
            xi0 = 0.0;
            sigma0 = sigma0.max(zmax);
        }
    }

    let objective = |x: &[f64]| -gp_log_likelihood(exceedances, x[0], x[1].exp()) / n;
    let mut opts = NelderMeadOptions::new(vec![0.05, 0.1]);
    opts.f_tol = 1e-14;
    opts.x_tol = 1e-10;
    let m = nelder_mead(objective, &[xi0, sigma0.ln()], &opts)?;
    let (shape, scale) = (m.x[0], m.x[1].exp());
    Ok(GpFit {
        shape,
        scale,
        loglik: gp_log_likelihood(exceedances, shape, scale),
        iterations: m.iterations,
    })
}
