use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "demma", version, about = "Extreme-value mixture fitting and quantile forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan candidate thresholds and pick the left edge of the first stable window.
    Scan(ScanArgs),
    /// Fit the zero/log-normal/GP mixture and write goodness-of-fit tables.
    FitMixture(FitMixtureArgs),
    /// Draw a synthetic dataset from a fitted mixture.
    Simulate(SimulateArgs),
    /// Train the forecasting network.
    Train(TrainArgs),
    /// Forecast quantiles and values for a dataset.
    Predict(PredictArgs),
    /// Region-split RMSE of a prediction file.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the full training objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    /// Window range within a multiple of the left-edge standard errors.
    StandardError,
    /// Window range relative to its median below --tol.
    Relative,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScanOptions {
    /// Number of candidate quantile levels.
    #[arg(long, default_value_t = 60)]
    pub grid: usize,
    /// Consecutive candidates that must agree.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// Relative dispersion tolerance for `--rule relative`.
    #[arg(long, default_value_t = 0.2)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::StandardError)]
    pub rule: RuleArg,
    /// Standard-error multiple for `--rule standard-error`.
    #[arg(long, default_value_t = 6.0)]
    pub se_multiplier: f64,
    /// Lowest candidate quantile level of the positive values.
    #[arg(long, default_value_t = 0.70)]
    pub quantile_lo: f64,
    /// Highest candidate quantile level of the positive values.
    #[arg(long, default_value_t = 0.995)]
    pub quantile_hi: f64,
    /// Minimum exceedances for a candidate fit.
    #[arg(long, default_value_t = 30)]
    pub min_exceedances: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScanArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub target_col: String,
    #[command(flatten)]
    pub scan: ScanOptions,
    /// Scan result JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-candidate table (TSV).
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitMixtureArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub target_col: String,
    /// Existing scan result; a scan is run when omitted.
    #[arg(long)]
    pub scan: Option<PathBuf>,
    #[command(flatten)]
    pub scan_options: ScanOptions,
    /// Mixture parameter JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Empirical vs fitted CDF table; defaults to `<out>.cdf.tsv`.
    #[arg(long)]
    pub cdf_table: Option<PathBuf>,
    /// Log empirical vs log model survival table; defaults to `<out>.survival.tsv`.
    #[arg(long)]
    pub survival_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Mixture parameter JSON.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 11)]
    pub predictors: usize,
    /// Predictor noise scale; defaults to 0.2 times the tail scale σ₀.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataOptions {
    #[arg(long, default_value = "y")]
    pub target_col: String,
    /// Comma-separated predictor columns; all non-target columns when omitted.
    #[arg(long, value_delimiter = ',')]
    pub predictor_cols: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: DataOptions,
    /// Mixture JSON; fitted on the training part when omitted.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    /// Where a mixture fitted here is written; defaults to `<out>.mixture.json`.
    #[arg(long)]
    pub mixture_out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Weight of the reconstruction loss.
    #[arg(long, default_value_t = 0.5)]
    pub w: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train:validation:test proportions.
    #[arg(long, default_value = "7:2:1")]
    pub ratios: String,
    /// Rotate rows by this many positions before splitting.
    #[arg(long, default_value_t = 0)]
    pub split_offset: usize,
    /// Draw the split offset from the seed.
    #[arg(long)]
    pub random_split: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartArg {
    Train,
    Validation,
    Test,
    /// Every window of the file, ignoring the stored split.
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    /// Trained model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Mixture JSON used in training.
    #[arg(long)]
    pub mixture: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: DataOptions,
    #[arg(long, value_enum, default_value_t = PartArg::Test)]
    pub part: PartArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Prediction CSV with `y` and `y_hat` columns.
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    pub split_quantile: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveArg {
    Add,
    Sub,
    Mul,
    Matmul,
    Concat,
    Slice,
    Transpose,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    LayerNorm,
    Mse,
    Pinball,
    Scale,
    RowSum,
    Sum,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Scale the adjoint of one primitive (negative control).
    #[arg(long, value_enum)]
    pub inject_fault: Option<PrimitiveArg>,
    #[arg(long, default_value_t = 1.05)]
    pub fault_factor: f64,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
