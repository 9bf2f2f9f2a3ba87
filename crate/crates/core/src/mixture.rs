//! Zero / truncated log-normal / GP-tail mixture.
//!
//! The CDF is `p0` at zero, `p0 + p1·F_L(y)/F_L(u*)` on `(0, u*)` and the
//! threshold-independent GP CDF from `u*` on. `p1` is always derived as
//! `1 − p0 − ζ_{u*}`, which makes the CDF continuous at `u*`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    gp_cdf_invariant, gp_density_invariant, gp_quantile_invariant, gp_survival_invariant,
    lognormal_cdf, lognormal_ln_pdf, lognormal_quantile, GpInvariantParams, LogNormalParams,
};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::threshold_scan::ScanResult;

pub const MIXTURE_FORMAT_VERSION: u32 = 1;

/// Tolerance on `p0 + p1 + ζ_{u*} = 1`.
const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams {
    pub p0: f64,
    pub p1: f64,
    pub lognormal: LogNormalParams,
    pub gp: GpInvariantParams,
    pub u_star: f64,
}

#[derive(Serialize, Deserialize)]
struct MixtureDocument {
    format_version: u32,
    p0: f64,
    p1: f64,
    lognormal: LogNormalParams,
    gp: GpInvariantParams,
    u_star: f64,
}

impl MixtureParams {
    /// Builds the mixture from its free components, deriving `p1`.
    pub fn from_components(
        p0: f64,
        lognormal: LogNormalParams,
        gp: GpInvariantParams,
        u_star: f64,
    ) -> Result<Self> {
        gp.validate()?;
        if !(u_star > 0.0) {
            return Err(Error::InvalidParameters(format!("u* must be > 0, got {u_star}")));
        }
        let zeta_star = gp_survival_invariant(u_star, &gp)?;
        let p1 = 1.0 - p0 - zeta_star;
        if !(p1 > 0.0) {
            return Err(Error::InconsistentComponents(format!(
                "p1 = 1 - p0 - zeta(u*) = 1 - {p0} - {zeta_star} <= 0; threshold too low or too many zeros"
            )));
        }
        let m = Self {
            p0,
            p1,
            lognormal,
            gp,
            u_star,
        };
        m.validate()?;
        Ok(m)
    }

    /// Tail mass above `u*`.
    pub fn zeta_star(&self) -> f64 {
        gp_survival_invariant(self.u_star, &self.gp).unwrap_or(f64::NAN)
    }

    pub fn validate(&self) -> Result<()> {
        self.gp.validate()?;
        LogNormalParams::new(self.lognormal.mu, self.lognormal.sigma)?;
        if !(self.p0 >= 0.0 && self.p0 < 1.0) {
            return Err(Error::InvalidParameters(format!("p0 must lie in [0, 1), got {}", self.p0)));
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return Err(Error::InvalidParameters(format!("p1 must lie in (0, 1), got {}", self.p1)));
        }
        if !(self.u_star > 0.0 && self.u_star.is_finite()) {
            return Err(Error::InvalidParameters(format!("u* must be > 0, got {}", self.u_star)));
        }
        let zeta = self.zeta_star();
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::InvalidParameters(format!("zeta(u*) must lie in (0, 1], got {zeta}")));
        }
        let total = self.p0 + self.p1 + zeta;
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InconsistentComponents(format!(
                "p0 + p1 + zeta(u*) = {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MixtureDocument {
            format_version: MIXTURE_FORMAT_VERSION,
            p0: self.p0,
            p1: self.p1,
            lognormal: self.lognormal,
            gp: self.gp,
            u_star: self.u_star,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MixtureDocument = serde_json::from_str(text)?;
        if doc.format_version != MIXTURE_FORMAT_VERSION {
            return Err(Error::Ingestion(format!(
                "unsupported mixture format version {}",
                doc.format_version
            )));
        }
        let m = Self {
            p0: doc.p0,
            p1: doc.p1,
            lognormal: doc.lognormal,
            gp: doc.gp,
            u_star: doc.u_star,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Negative mean truncated log-normal log-likelihood on `(0, upper)`.
pub fn truncated_lognormal_nll(values: &[f64], p: &LogNormalParams, upper: f64) -> f64 {
    let Ok(mass) = lognormal_cdf(upper, p) else {
        return f64::INFINITY;
    };
    if !(mass > 0.0) {
        return f64::INFINITY;
    }
    let ln_mass = mass.ln();
    let sum: f64 = values.iter().map(|&y| lognormal_ln_pdf(y, p) - ln_mass).sum();
    -sum / values.len() as f64
}

/// Closed-form (untruncated) log-normal estimate: mean and standard
/// deviation of `ln y`.
pub fn lognormal_moments(values: &[f64]) -> LogNormalParams {
    let logs: Vec<f64> = values.iter().map(|y| y.ln()).collect();
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
    LogNormalParams {
        mu,
        sigma: var.sqrt().max(1e-6),
    }
}

/// Truncated log-normal MLE on values in `(0, upper)`.
pub fn fit_truncated_lognormal(values: &[f64], upper: f64) -> Result<LogNormalParams> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "truncated log-normal fit needs at least 2 values in (0, u*), got {}",
            values.len()
        )));
    }
    let start = lognormal_moments(values);
    let objective = |x: &[f64]| {
        truncated_lognormal_nll(
            values,
            &LogNormalParams {
                mu: x[0],
                sigma: x[1].exp(),
            },
            upper,
        )
    };
    let mut opts = NelderMeadOptions::new(vec![0.1 * start.sigma.max(0.1), 0.1]);
    opts.f_tol = 1e-14;
    opts.x_tol = 1e-10;
    let m = nelder_mead(objective, &[start.mu, start.sigma.ln()], &opts)?;
    LogNormalParams::new(m.x[0], m.x[1].exp())
}

/// Fits the full mixture; the tail parameters and `u*` come from `scan`.
pub fn fit_mixture(data: &[f64], scan: &ScanResult) -> Result<MixtureParams> {
    if data.is_empty() {
        return Err(Error::InsufficientData("cannot fit a mixture to an empty series".into()));
    }
    if let Some(bad) = data.iter().find(|y| !(y.is_finite() && **y >= 0.0)) {
        return Err(Error::Domain(format!("mixture data must be finite and >= 0, found {bad}")));
    }
    let zeros = data.iter().filter(|&&y| y == 0.0).count();
    let p0 = zeros as f64 / data.len() as f64;
    let body: Vec<f64> = data
        .iter()
        .copied()
        .filter(|&y| y > 0.0 && y < scan.u_star)
        .collect();
    if body.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no observations in (0, u* = {})",
            scan.u_star
        )));
    }
    let lognormal = fit_truncated_lognormal(&body, scan.u_star)?;
    MixtureParams::from_components(p0, lognormal, scan.params, scan.u_star)
}

pub fn mixture_cdf(y: f64, m: &MixtureParams) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    if y == 0.0 {
        return m.p0;
    }
    if y < m.u_star {
        let scale = lognormal_cdf(m.u_star, &m.lognormal).expect("u* > 0");
        let body = lognormal_cdf(y, &m.lognormal).expect("y > 0");
        return m.p0 + m.p1 * body / scale;
    }
    // past a finite upper endpoint all mass has been accumulated
    gp_cdf_invariant(y, &m.gp).unwrap_or(1.0)
}

/// Inverse CDF. Levels in `[0, p0]` map to the zero atom.
pub fn mixture_quantile(q: f64, m: &MixtureParams) -> Result<f64> {
    if !(q >= 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in [0, 1), got {q}")));
    }
    if q <= m.p0 {
        return Ok(0.0);
    }
    if q < m.p0 + m.p1 {
        let scale = lognormal_cdf(m.u_star, &m.lognormal)?;
        let v = ((q - m.p0) * scale / m.p1).min(scale);
        if !(v > 0.0) {
            return Ok(0.0);
        }
        if v >= scale {
            return Ok(m.u_star);
        }
        return lognormal_quantile(v, &m.lognormal).map(|y| y.min(m.u_star));
    }
    gp_quantile_invariant(q, &m.gp).map(|y| y.max(m.u_star))
}

/// Density of the continuous part; the zero atom has no density.
pub fn mixture_density(y: f64, m: &MixtureParams) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("mixture density requires y > 0, got {y}")));
    }
    if y < m.u_star {
        let scale = lognormal_cdf(m.u_star, &m.lognormal)?;
        return Ok(m.p1 * lognormal_ln_pdf(y, &m.lognormal).exp() / scale);
    }
    Ok(gp_density_invariant(y, &m.gp).unwrap_or(0.0))
}

/// Inverse-transform sampling with an explicit generator.
pub fn sample_mixture_with<R: Rng + ?Sized>(m: &MixtureParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            mixture_quantile(u, m).expect("u in [0, 1)")
        })
        .collect()
}

/// Inverse-transform sampling, reproducible for a fixed seed.
pub fn sample_mixture(m: &MixtureParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_mixture_with(m, n, &mut rng)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// p0 = 0.4, log-normal(1, 0.5) body, GP(ξ=0.2, σ₀=3) tail from u* = 15
    /// with 10% of the mass above it.
    pub(crate) fn reference_mixture() -> MixtureParams {
        let zeta0 = 0.1 * 2f64.powi(5);
        MixtureParams::from_components(
            0.4,
            LogNormalParams::new(1.0, 0.5).unwrap(),
            GpInvariantParams::new(0.2, 3.0, zeta0).unwrap(),
            15.0,
        )
        .unwrap()
    }

    #[test]
    fn reference_values() {
        let m = reference_mixture();
        assert!((m.p1 - 0.5).abs() < 1e-12);
        assert!((m.zeta_star() - 0.1).abs() < 1e-12);
        assert_eq!(mixture_cdf(0.0, &m), 0.4);
        assert_eq!(mixture_cdf(-3.0, &m), 0.0);
        assert!((mixture_cdf(15.0, &m) - 0.9).abs() < 1e-12);
        assert!((mixture_cdf(15.0 - 1e-12, &m) - mixture_cdf(15.0, &m)).abs() < 1e-9);
    }

    #[test]
    fn quantile_boundaries() {
        let m = reference_mixture();
        assert_eq!(mixture_quantile(0.0, &m).unwrap(), 0.0);
        assert_eq!(mixture_quantile(m.p0, &m).unwrap(), 0.0);
        assert!((mixture_quantile(m.p0 + m.p1, &m).unwrap() - 15.0).abs() < 1e-9);
        assert!(mixture_quantile(1.0, &m).is_err());
        assert!(mixture_quantile(-0.1, &m).is_err());
    }

    #[test]
    fn inconsistent_components_rejected() {
        let err = MixtureParams::from_components(
            0.95,
            LogNormalParams::new(0.0, 1.0).unwrap(),
            GpInvariantParams::new(0.1, 1.0, 0.5).unwrap(),
            0.1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InconsistentComponents(_)));
    }

    #[test]
    fn density_domain() {
        let m = reference_mixture();
        assert!(mixture_density(0.0, &m).is_err());
        assert!(mixture_density(3.0, &m).unwrap() > 0.0);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = reference_mixture();
        let back = MixtureParams::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let bumped = m.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(MixtureParams::from_json(&bumped).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = reference_mixture();
        assert_eq!(sample_mixture(&m, 100, 7), sample_mixture(&m, 100, 7));
        assert_ne!(sample_mixture(&m, 100, 7), sample_mixture(&m, 100, 8));
    }

    #[test]
    fn no_zeros_means_zero_p0() {
        let m = MixtureParams::from_components(
            0.0,
            LogNormalParams::new(1.0, 0.5).unwrap(),
            GpInvariantParams::new(0.2, 3.0, 3.2).unwrap(),
            15.0,
        )
        .unwrap();
        let data: Vec<f64> = sample_mixture(&m, 20_000, 3);
        assert!(data.iter().all(|&y| y > 0.0));
        let scan = crate::threshold_scan::scan_thresholds(&data, &Default::default()).unwrap();
        let fit = fit_mixture(&data, &scan).unwrap();
        assert_eq!(fit.p0, 0.0);
    }

    #[test]
    fn fit_errors() {
        let m = reference_mixture();
        let data = sample_mixture(&m, 5_000, 1);
        let mut scan = crate::threshold_scan::scan_thresholds(&data, &Default::default()).unwrap();
        assert!(fit_mixture(&[], &scan).is_err());
        scan.u_star = 1e-9;
        assert!(matches!(fit_mixture(&data, &scan), Err(Error::InsufficientData(_))));
    }
}
