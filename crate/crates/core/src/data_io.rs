//! CSV ingestion, chronological splitting, standardization, sliding windows
//! and a synthetic dataset generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{sample_mixture_with, MixtureParams};
use crate::tensor::Tensor;

/// Header names recognized as an optional timestamp column.
const TIMESTAMP_COLUMNS: [&str; 3] = ["timestamp", "date", "time"];

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub timestamps: Option<Vec<String>>,
    pub target_name: String,
    pub predictor_names: Vec<String>,
    pub target: Vec<f64>,
    /// One entry per row, each of length `n`.
    pub predictors: Vec<Vec<f64>>,
}

impl SeriesDataset {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictor_names.len()
    }
}

/// Reads a headered CSV. With `predictor_cols = None` every column other than
/// the target and a timestamp column is used as a predictor.
pub fn load_csv(path: impl AsRef<Path>, target_col: &str, predictor_cols: Option<&[String]>) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Ingestion(format!("{}: missing header row", path.display())));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingestion(format!("{}: no column named '{name}'", path.display())))
    };
    let target_idx = find(target_col)?;
    let ts_idx = headers
        .iter()
        .position(|h| TIMESTAMP_COLUMNS.contains(&h.to_ascii_lowercase().as_str()));
    let predictor_names: Vec<String> = match predictor_cols {
        Some(cols) => cols.to_vec(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target_idx && Some(*i) != ts_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let predictor_idx = predictor_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut ds = SeriesDataset {
        timestamps: ts_idx.map(|_| Vec::new()),
        target_name: target_col.to_string(),
        predictor_names,
        target: Vec::new(),
        predictors: Vec::new(),
    };
    for (r, record) in reader.records().enumerate() {
        // Data rows are numbered from 1, after the header.
        let row = r + 1;
        let record = record.map_err(|e| Error::Ingestion(format!("{}: row {row}: {e}", path.display())))?;
        let cell = |idx: usize| -> Result<f64> {
            let col = &headers[idx];
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::Ingestion(format!("row {row}, column '{col}': missing value")));
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Ingestion(format!("row {row}, column '{col}': cannot parse '{raw}' as a finite number"))),
            }
        };
        let y = cell(target_idx)?;
        if y < 0.0 {
            return Err(Error::Ingestion(format!(
                "row {row}, column '{target_col}': target must be >= 0, got {y}"
            )));
        }
        ds.target.push(y);
        ds.predictors.push(predictor_idx.iter().map(|&i| cell(i)).collect::<Result<_>>()?);
        if let (Some(ts), Some(i)) = (ds.timestamps.as_mut(), ts_idx) {
            ts.push(record.get(i).unwrap_or("").to_string());
        }
    }
    if ds.is_empty() {
        return Err(Error::Ingestion(format!("{}: no data rows", path.display())));
    }
    Ok(ds)
}

/// Writes the dataset in the dialect [`load_csv`] reads. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv(ds: &SeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Ingestion(e.to_string()))?;
    let mut header: Vec<&str> = Vec::new();
    if ds.timestamps.is_some() {
        header.push("timestamp");
    }
    header.push(&ds.target_name);
    header.extend(ds.predictor_names.iter().map(String::as_str));
    w.write_record(&header).map_err(|e| Error::Ingestion(e.to_string()))?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ts) = &ds.timestamps {
            rec.push(ts[r].clone());
        }
        rec.push(ds.target[r].to_string());
        rec.extend(ds.predictors[r].iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| Error::Ingestion(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub window: usize,
    /// Rows are rotated left by this amount before the chronological cut.
    pub offset: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.7, 0.2, 0.1],
            window: 7,
            offset: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config(format!("split ratios must be nonnegative, got {:?}", self.ratios)));
        }
        let total: f64 = self.ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {total}")));
        }
        if self.ratios.iter().any(|r| *r == 0.0) {
            return Err(Error::Config(format!(
                "every split part needs a positive ratio, got {:?}",
                self.ratios
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        Ok(())
    }
}

/// A split offset drawn uniformly from the row range.
pub fn random_offset(n_rows: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..n_rows.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Per-feature statistics; a zero-variance feature keeps std 1 and is reported.
    pub fn fit(rows: &[&[f64]]) -> (Self, Vec<usize>) {
        let n = rows.first().map_or(0, |r| r.len());
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n];
        for r in rows {
            for j in 0..n {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let mut degenerate = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / count).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    degenerate.push(j);
                    1.0
                }
            })
            .collect();
        (Self { mean, std }, degenerate)
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `n × T`; column `t` holds the standardized predictors of row `start + t`.
    pub x: Tensor,
    /// Raw target of row `start + T`.
    pub y: f64,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub windows: Vec<Window>,
    pub stats: Standardization,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.y).collect()
    }
}

/// Half-open row ranges `[start, end)` of the original dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub n_rows: usize,
    pub offset: usize,
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub test: WindowedDataset,
    pub info: SplitInfo,
    /// Raw targets of every training row, for fitting the mixture.
    pub train_targets: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Maps a rotated span `[a, b)` back to contiguous ranges of original rows.
fn unrotate(a: usize, b: usize, offset: usize, n: usize) -> Vec<(usize, usize)> {
    let (s, e) = (a + offset, b + offset);
    if e <= n {
        vec![(s, e)]
    } else if s >= n {
        vec![(s - n, e - n)]
    } else {
        vec![(s, n), (0, e - n)]
    }
}

pub(crate) fn rows_of(ranges: &[(usize, usize)]) -> impl Iterator<Item = usize> + '_ {
    ranges.iter().flat_map(|&(a, b)| a..b)
}

/// Sliding windows over each range in `ranges`, standardized with `stats`.
pub fn build_windows(ds: &SeriesDataset, ranges: &[(usize, usize)], stats: &Standardization, t_len: usize) -> WindowedDataset {
    let n = ds.n_predictors();
    let mut windows = Vec::new();
    for &(a, b) in ranges {
        if b - a <= t_len {
            continue;
        }
        let standardized: Vec<Vec<f64>> = (a..b).map(|r| stats.apply(&ds.predictors[r])).collect();
        for i in 0..(b - a - t_len) {
            windows.push(Window {
                x: Tensor::from_fn(n, t_len, |j, t| standardized[i + t][j]),
                y: ds.target[a + i + t_len],
                start: a + i,
            });
        }
    }
    WindowedDataset {
        windows,
        stats: stats.clone(),
    }
}

/// Chronological split with train-only standardization and per-part windows.
/// Windows never straddle a part boundary or the rotation seam.
pub fn split_and_standardize(ds: &SeriesDataset, cfg: &SplitConfig) -> Result<DatasetSplits> {
    cfg.validate()?;
    let n = ds.len();
    if ds.n_predictors() == 0 {
        return Err(Error::Config("at least one predictor column is required".into()));
    }
    let n_train = (n as f64 * cfg.ratios[0]).round() as usize;
    let n_val = ((n as f64 * cfg.ratios[1]).round() as usize).min(n.saturating_sub(n_train));
    let n_test = n - n_train - n_val;
    let offset = if n == 0 { 0 } else { cfg.offset % n };
    let info = SplitInfo {
        n_rows: n,
        offset,
        train: unrotate(0, n_train, offset, n),
        validation: unrotate(n_train, n_train + n_val, offset, n),
        test: unrotate(n_train + n_val, n, offset, n),
    };
    for (name, rows) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if rows <= cfg.window {
            return Err(Error::Config(format!(
                "{name} part has {rows} rows, needs more than the window length {}",
                cfg.window
            )));
        }
    }

    let train_rows: Vec<&[f64]> = rows_of(&info.train).map(|r| ds.predictors[r].as_slice()).collect();
    let (stats, degenerate) = Standardization::fit(&train_rows);
    let warnings = degenerate
        .iter()
        .map(|&j| {
            format!(
                "predictor '{}' has zero variance on the training part; using std 1",
                ds.predictor_names[j]
            )
        })
        .collect();

    let parts = [&info.train, &info.validation, &info.test].map(|r| build_windows(ds, r, &stats, cfg.window));
    for (name, part) in ["train", "validation", "test"].iter().zip(&parts) {
        if part.is_empty() {
            return Err(Error::Config(format!("{name} part yields no complete window")));
        }
    }
    let [train, validation, test] = parts;
    Ok(DatasetSplits {
        train,
        validation,
        test,
        train_targets: rows_of(&info.train).map(|r| ds.target[r]).collect(),
        info,
        warnings,
    })
}

/// Targets drawn from `mixture`; predictor `j` (0-based) at row `t` is
/// `y[t+1]` plus Gaussian noise with standard deviation
/// `noise_scale · (1 + j / n_predictors)`.
pub fn generate_synthetic(
    mixture: &MixtureParams,
    n_rows: usize,
    n_predictors: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<SeriesDataset> {
    mixture.validate()?;
    if n_predictors == 0 {
        return Err(Error::Config("at least one predictor is required".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::Config(format!("noise scale must be finite and >= 0, got {noise_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = sample_mixture_with(mixture, n_rows + 1, &mut rng);
    let normals: Vec<Normal<f64>> = (0..n_predictors)
        .map(|j| {
            let sd = noise_scale * (1.0 + j as f64 / n_predictors as f64);
            Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let predictors = (0..n_rows)
        .map(|t| normals.iter().map(|d| y[t + 1] + d.sample(&mut rng)).collect())
        .collect();
    Ok(SeriesDataset {
        timestamps: None,
        target_name: "y".into(),
        predictor_names: (1..=n_predictors).map(|j| format!("x{j}")).collect(),
        target: y[..n_rows].to_vec(),
        predictors,
    })
}
