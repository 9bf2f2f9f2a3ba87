//! Threshold-stability scan.
//!
//! The threshold-independent GP parameters `(ξ, σ₀, ζ₀)` are re-estimated
//! over an increasing grid of candidate thresholds. Above the threshold
//! where the GP law starts to hold they stop drifting; the lowest window of
//! consecutive candidates whose estimates agree is the stable region, its
//! left edge is `u*` and the per-component medians over it are the tail
//! parameters.

use serde::{Deserialize, Serialize};

use crate::distributions::{convert_to_invariant, gp_fit_mle, GpInvariantParams, GpThresholdParams};
use crate::error::{Error, Result};
use crate::stats::{empirical_quantile_sorted, median};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub quantile_lo: f64,
    pub quantile_hi: f64,
    pub grid_count: usize,
    pub stability_window: usize,
    pub dispersion_tol: f64,
    pub min_exceedances: usize,
    pub rule: StabilityRule,
    /// Allowed window range in units of the left-edge standard error
    /// (used by [`StabilityRule::StandardError`]).
    pub se_multiplier: f64,
}

/// How a window of consecutive candidates is judged stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityRule {
    /// Every parameter's range over the window, divided by the absolute
    /// window median, is below `dispersion_tol`.
    RelativeDispersion,
    /// Every parameter's range over the window (ξ, σ₀ and ln ζ₀) is below
    /// `se_multiplier` asymptotic standard errors of the left-edge fit.
    StandardError,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            quantile_lo: 0.70,
            quantile_hi: 0.995,
            grid_count: 60,
            stability_window: 10,
            dispersion_tol: 0.20,
            min_exceedances: 30,
            rule: StabilityRule::StandardError,
            se_multiplier: 6.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.quantile_lo && self.quantile_lo < self.quantile_hi && self.quantile_hi < 1.0) {
            return Err(Error::Config(format!(
                "scan quantiles must satisfy 0 < lo < hi < 1, got {} and {}",
                self.quantile_lo, self.quantile_hi
            )));
        }
        if self.stability_window < 3 {
            return Err(Error::Config(format!(
                "stability window must be >= 3, got {}",
                self.stability_window
            )));
        }
        if !(self.dispersion_tol > 0.0) {
            return Err(Error::Config("dispersion tolerance must be > 0".into()));
        }
        if !(self.se_multiplier > 0.0) {
            return Err(Error::Config("standard-error multiplier must be > 0".into()));
        }
        if self.grid_count < 2 {
            return Err(Error::Config("grid must contain at least two candidates".into()));
        }
        Ok(())
    }
}

/// One row of the scan table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanCandidate {
    pub threshold: f64,
    pub shape: f64,
    pub scale0: f64,
    pub zeta0: f64,
    pub n_exceed: usize,
    /// Asymptotic standard errors of ξ, σ₀ and ln ζ₀ at this threshold.
    pub se_shape: f64,
    pub se_scale0: f64,
    pub se_ln_zeta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub candidates: Vec<ScanCandidate>,
    /// Inclusive candidate index range of the selected window.
    pub stable_region: (usize, usize),
    pub u_star: f64,
    pub params: GpInvariantParams,
    /// `false` when no window met the dispersion tolerance and the least
    /// dispersed window was returned instead.
    pub stable: bool,
    /// Largest of the three relative dispersions over the selected window.
    pub max_dispersion: f64,
    /// Score of the selected window under the configured rule (< 1 is stable).
    pub stability_score: f64,
    /// Total number of observations (including zeros) the scan saw.
    pub n_total: usize,
}

impl ScanResult {
    /// Tab-separated per-candidate table with a header row.
    pub fn candidates_tsv(&self) -> String {
        let mut out = String::from("threshold\txi\tsigma0\tzeta0\tn_exceed\n");
        for c in &self.candidates {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                c.threshold, c.shape, c.scale0, c.zeta0, c.n_exceed
            ));
        }
        out
    }
}

/// `(max − min) / max(|median|, 1e-9)`.
pub fn relative_dispersion(values: &[f64]) -> f64 {
    range(values) / median(values).abs().max(1e-9)
}

/// Candidate thresholds: empirical quantiles of the positive values on an
/// even grid of levels, strictly increasing with duplicates removed.
pub fn candidate_thresholds(positive_sorted: &[f64], cfg: &ScanConfig) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(cfg.grid_count);
    let step = (cfg.quantile_hi - cfg.quantile_lo) / (cfg.grid_count - 1) as f64;
    for k in 0..cfg.grid_count {
        let level = cfg.quantile_lo + step * k as f64;
        let u = empirical_quantile_sorted(positive_sorted, level);
        if out.last().map_or(true, |&prev| u > prev) {
            out.push(u);
        }
    }
    out
}

/// Asymptotic standard errors of `(ξ, σ₀, ln ζ₀)` for a GP fit at threshold
/// `u` from `k` exceedances out of `n_total` observations.
///
/// Uses the large-sample MLE covariance
/// `(1+ξ)/k · [[1+ξ, σ], [σ, 2σ²]]` of `(ξ, σᵤ)`, a binomial variance for the
/// exceedance rate and the delta method for the invariant parameters.
pub fn invariant_standard_errors(shape: f64, scale: f64, u: f64, k: usize, n_total: usize) -> (f64, f64, f64) {
    let kf = k as f64;
    let a = (1.0 + shape).max(0.5);
    let var_xi = a * a / kf;
    let var_sigma = 2.0 * scale * scale * a / kf;
    let cov = scale * a / kf;

    // σ₀ = σᵤ − ξu
    let var_scale0 = var_sigma + u * u * var_xi - 2.0 * u * cov;

    // ln ζ₀ = ln ζᵤ − (1/ξ) ln(1 − ξu/σᵤ)
    let scale0 = scale - shape * u;
    let d_sigma = -u / (scale * scale0);
    let d_xi = if shape.abs() < 1e-4 {
        u * u / (2.0 * scale * scale)
    } else {
        (scale0 / scale).ln() / (shape * shape) + u / (shape * scale0)
    };
    let zeta = kf / n_total as f64;
    let var_ln_zeta = (1.0 - zeta) / kf;
    let var_ln_zeta0 =
        var_ln_zeta + d_xi * d_xi * var_xi + d_sigma * d_sigma * var_sigma + 2.0 * d_xi * d_sigma * cov;

    (var_xi.sqrt(), var_scale0.max(0.0).sqrt(), var_ln_zeta0.max(0.0).sqrt())
}

fn fit_candidate(sorted: &[f64], n_total: usize, u: f64, min_exceed: usize) -> Option<ScanCandidate> {
    let start = sorted.partition_point(|&y| y <= u);
    let exceedances: Vec<f64> = sorted[start..].iter().map(|y| y - u).collect();
    if exceedances.len() < min_exceed {
        return None;
    }
    let fit = gp_fit_mle(&exceedances, min_exceed).ok()?;
    let zeta_u = exceedances.len() as f64 / n_total as f64;
    let params = GpThresholdParams::new(fit.shape, fit.scale, zeta_u, u).ok()?;
    let inv = convert_to_invariant(&params).ok()?;
    let (se_shape, se_scale0, se_ln_zeta0) =
        invariant_standard_errors(fit.shape, fit.scale, u, exceedances.len(), n_total);
    Some(ScanCandidate {
        threshold: u,
        shape: inv.shape,
        scale0: inv.scale0,
        zeta0: inv.zeta0,
        n_exceed: exceedances.len(),
        se_shape,
        se_scale0,
        se_ln_zeta0,
    })
}

/// Runs the stability scan on raw (non-negative, zero-inflated) data.
pub fn scan_thresholds(data: &[f64], cfg: &ScanConfig) -> Result<ScanResult> {
    cfg.validate()?;
    if let Some(bad) = data.iter().find(|y| !(y.is_finite() && **y >= 0.0)) {
        return Err(Error::Domain(format!("scan data must be finite and >= 0, found {bad}")));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let first_positive = sorted.partition_point(|&y| y <= 0.0);
    let positive = &sorted[first_positive..];
    if positive.len() < cfg.min_exceedances {
        return Err(Error::InsufficientData(format!(
            "only {} positive values, need at least {}",
            positive.len(),
            cfg.min_exceedances
        )));
    }

    let candidates: Vec<ScanCandidate> = candidate_thresholds(positive, cfg)
        .into_iter()
        .filter_map(|u| fit_candidate(&sorted, data.len(), u, cfg.min_exceedances))
        .collect();
    if candidates.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no candidate threshold has {} exceedances with a valid GP fit",
            cfg.min_exceedances
        )));
    }

    let width = cfg.stability_window.min(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    let mut first_stable = None;
    for lo in 0..=candidates.len() - width {
        let score = window_score(&candidates[lo..lo + width], cfg);
        if score < 1.0 {
            first_stable = Some(lo);
            break;
        }
        if best.map_or(true, |(_, s)| score < s) {
            best = Some((lo, score));
        }
    }
    let stable = first_stable.is_some();
    let lo = first_stable.or(best.map(|(lo, _)| lo)).expect("at least one window");
    let window = &candidates[lo..lo + width];
    let pick = |f: fn(&ScanCandidate) -> f64| median(&window.iter().map(f).collect::<Vec<_>>());
    let params = GpInvariantParams::new(pick(|c| c.shape), pick(|c| c.scale0), pick(|c| c.zeta0))?;

    Ok(ScanResult {
        u_star: candidates[lo].threshold,
        stable_region: (lo, lo + width - 1),
        max_dispersion: window_dispersion(window),
        stability_score: window_score(window, cfg),
        candidates,
        params,
        stable,
        n_total: data.len(),
    })
}

fn column(window: &[ScanCandidate], f: impl Fn(&ScanCandidate) -> f64) -> Vec<f64> {
    window.iter().map(f).collect()
}

fn range(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Largest relative dispersion of ξ, σ₀ and ζ₀ over the window.
pub fn window_dispersion(window: &[ScanCandidate]) -> f64 {
    relative_dispersion(&column(window, |c| c.shape))
        .max(relative_dispersion(&column(window, |c| c.scale0)))
        .max(relative_dispersion(&column(window, |c| c.zeta0)))
}

/// Stability score of a window under the configured rule; stable iff < 1.
pub fn window_score(window: &[ScanCandidate], cfg: &ScanConfig) -> f64 {
    match cfg.rule {
        StabilityRule::RelativeDispersion => window_dispersion(window) / cfg.dispersion_tol,
        StabilityRule::StandardError => {
            let edge = &window[0];
            let k = cfg.se_multiplier;
            let xi = range(&column(window, |c| c.shape)) / (k * edge.se_shape);
            let s0 = range(&column(window, |c| c.scale0)) / (k * edge.se_scale0);
            let z0 = range(&column(window, |c| c.zeta0.ln())) / (k * edge.se_ln_zeta0);
            xi.max(s0).max(z0)
        }
    }
}
