//! Goodness-of-fit tables for a fitted mixture.

use demma_core::mixture::{mixture_cdf, MixtureParams};

const GRID_POINTS: usize = 200;

/// `y`, empirical CDF and model CDF on an even grid from 0 to the sample maximum.
pub fn cdf_table(sorted: &[f64], m: &MixtureParams) -> String {
    let mut out = String::from("y\tempirical_cdf\tmodel_cdf\n");
    let max = sorted.last().copied().unwrap_or(0.0);
    let n = sorted.len() as f64;
    for i in 0..=GRID_POINTS {
        let y = max * i as f64 / GRID_POINTS as f64;
        let ecdf = sorted.partition_point(|v| *v <= y) as f64 / n;
        out.push_str(&format!("{y}\t{ecdf}\t{}\n", mixture_cdf(y, m)));
    }
    out
}

/// Log survival, empirical and model, on a log-spaced grid over the positive
/// range. Points where the empirical survival is zero are omitted.
pub fn survival_table(sorted: &[f64], m: &MixtureParams) -> String {
    let mut out = String::from("y\tlog_empirical_survival\tlog_model_survival\n");
    let n = sorted.len() as f64;
    let lo = sorted.iter().copied().find(|v| *v > 0.0);
    let hi = sorted.last().copied();
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return out;
    };
    for i in 0..=GRID_POINTS {
        let y = lo * (hi / lo).powf(i as f64 / GRID_POINTS as f64);
        let above = sorted.len() - sorted.partition_point(|v| *v <= y);
        if above == 0 {
            continue;
        }
        let emp = (above as f64 / n).ln();
        let model = (1.0 - mixture_cdf(y, m)).ln();
        out.push_str(&format!("{y}\t{emp}\t{model}\n"));
    }
    out
}
