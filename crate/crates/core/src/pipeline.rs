//! Model assembly, the combined objective, training, prediction and
//! region-split evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auto_lstm::{
    decode_on_tape, encode_on_tape, reconstruction_loss_on_tape, uniform, Affine, AffineVars, LstmParams, LstmVars,
    NamedRefs,
};
use crate::autodiff::{Primitive, Tape, Var};
use crate::data_io::{SplitInfo, Standardization, Window};
use crate::error::{Error, Result};
use crate::forecaster::{forecaster_on_tape, ForecasterParams, ForecasterVars};
use crate::gradcheck::{gradient_check, GradCheckReport};
use crate::mixture::{mixture_cdf, mixture_quantile, MixtureParams};
use crate::optim::Adam;
use crate::stats::empirical_quantile;
use crate::tensor::Tensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Predictor count `n`.
    pub n_predictors: usize,
    /// Window length `T`.
    pub window: usize,
    /// Hidden width `m`.
    pub hidden: usize,
    /// Attention head count `d`.
    pub heads: usize,
    /// Pinball quantile level.
    pub tau: f64,
    /// Weight of the reconstruction term.
    pub w: f64,
}

impl Hyperparameters {
    pub fn new(n_predictors: usize, window: usize) -> Self {
        Self {
            n_predictors,
            window,
            hidden: 64,
            heads: 4,
            tau: 0.5,
            w: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_predictors == 0 || self.window == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "predictors, window and hidden size must be positive, got n={} T={} m={}",
                self.n_predictors, self.window, self.hidden
            )));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must divide hidden size {}",
                self.heads, self.hidden
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!("w must lie in [0, 1], got {}", self.w)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemmaModel {
    pub hyper: Hyperparameters,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// Decoder hidden state to reconstructed predictors, `m → n`.
    pub projection: Affine,
    pub forecaster: ForecasterParams,
    /// Training-part statistics used to standardize inputs.
    pub standardization: Option<Standardization>,
    pub split: Option<SplitInfo>,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: LstmVars,
    pub decoder: LstmVars,
    pub projection: AffineVars,
    pub forecaster: ForecasterVars,
}

#[derive(Serialize, Deserialize)]
struct NamedWeight {
    name: String,
    values: Tensor,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    hyperparameters: Hyperparameters,
    #[serde(default)]
    standardization: Option<Standardization>,
    #[serde(default)]
    split: Option<SplitInfo>,
    weights: Vec<NamedWeight>,
}

impl DemmaModel {
    pub fn zeros(hyper: Hyperparameters) -> Result<Self> {
        hyper.validate()?;
        let (n, m) = (hyper.n_predictors, hyper.hidden);
        Ok(Self {
            hyper,
            encoder: LstmParams::zeros(n, m),
            decoder: LstmParams::zeros(n, m),
            projection: Affine::zeros(m, n),
            forecaster: ForecasterParams::zeros(m, hyper.heads)?,
            standardization: None,
            split: None,
        })
    }

    pub fn init(hyper: Hyperparameters, rng: &mut ChaCha8Rng) -> Result<Self> {
        hyper.validate()?;
        let (n, m) = (hyper.n_predictors, hyper.hidden);
        let encoder = LstmParams::init(n, m, rng);
        let decoder = LstmParams::init(n, m, rng);
        let projection = Affine::init(m, n, rng);
        let forecaster = ForecasterParams::init(m, hyper.heads, rng)?;
        Ok(Self {
            hyper,
            encoder,
            decoder,
            projection,
            forecaster,
            standardization: None,
            split: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let (n, m) = (self.hyper.n_predictors, self.hyper.hidden);
        for (p, name) in [(&self.encoder, "encoder"), (&self.decoder, "decoder")] {
            p.validate()?;
            if p.input_size != n || p.hidden_size != m {
                return Err(Error::shape(name, &[p.input_size, p.hidden_size], &[n, m]));
            }
        }
        self.projection.validate("projection", m, n)?;
        self.forecaster.validate(m)?;
        if self.forecaster.attention.heads.len() != self.hyper.heads {
            return Err(Error::shape(
                "attention heads",
                &[self.forecaster.attention.heads.len()],
                &[self.hyper.heads],
            ));
        }
        if let Some(s) = &self.standardization {
            if s.mean.len() != n || s.std.len() != n {
                return Err(Error::shape("standardization", &[s.mean.len()], &[n]));
            }
        }
        Ok(())
    }

    /// Every trainable tensor with its name, in a fixed order.
    pub fn named_parameters(&self) -> NamedRefs<'_> {
        let mut out = Vec::new();
        self.encoder.collect("encoder", &mut out);
        self.decoder.collect("decoder", &mut out);
        self.projection.collect("projection", &mut out);
        self.forecaster.collect("forecaster", &mut out);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.encoder.collect_mut(&mut out);
        self.decoder.collect_mut(&mut out);
        self.projection.collect_mut(&mut out);
        self.forecaster.collect_mut(&mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Binds parameter leaves created in [`DemmaModel::named_parameters`] order.
    pub fn bind(&self, leaves: &[Var]) -> ModelVars {
        let mut it = leaves.iter().copied();
        ModelVars {
            encoder: self.encoder.bind(&mut it),
            decoder: self.decoder.bind(&mut it),
            projection: self.projection.bind(&mut it),
            forecaster: self.forecaster.bind(&mut it),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> (ModelVars, Vec<Var>) {
        let leaves: Vec<Var> = self
            .named_parameters()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        (self.bind(&leaves), leaves)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            hyperparameters: self.hyper,
            standardization: self.standardization.clone(),
            split: self.split.clone(),
            weights: self
                .named_parameters()
                .into_iter()
                .map(|(name, t)| NamedWeight {
                    name,
                    values: t.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Ingestion(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        let mut model = Self::zeros(doc.hyperparameters)?;
        let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        if names.len() != doc.weights.len() {
            return Err(Error::Ingestion(format!(
                "model document has {} weight arrays, expected {}",
                doc.weights.len(),
                names.len()
            )));
        }
        for ((slot, name), w) in model.parameters_mut().into_iter().zip(&names).zip(doc.weights) {
            if &w.name != name {
                return Err(Error::Ingestion(format!("expected weight '{name}', found '{}'", w.name)));
            }
            if w.values.shape() != slot.shape() {
                return Err(Error::shape("weight array", &w.values.shape(), &slot.shape()));
            }
            *slot = w.values;
        }
        model.standardization = doc.standardization;
        model.split = doc.split;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `q = F(y)` under the mixture.
pub fn quantile_transform(y: f64, mixture: &MixtureParams) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("target must be >= 0, got {y}")));
    }
    Ok(mixture_cdf(y, mixture))
}

/// Pinball loss `max(τ(q − q̂), (τ − 1)(q − q̂))`.
pub fn quantile_loss(q: f64, q_hat: f64, tau: f64) -> f64 {
    let e = q - q_hat;
    (tau * e).max((tau - 1.0) * e)
}

pub fn mean_quantile_loss(q: &[f64], q_hat: &[f64], tau: f64) -> f64 {
    q.iter().zip(q_hat).map(|(a, b)| quantile_loss(*a, *b, tau)).sum::<f64>() / q.len() as f64
}

pub fn combined_loss(recon: f64, quant: f64, w: f64) -> f64 {
    w * recon + (1.0 - w) * quant
}

fn check_window(w: &Window, hyper: &Hyperparameters) -> Result<()> {
    let want = [hyper.n_predictors, hyper.window];
    if w.x.shape() != want {
        return Err(Error::shape("window", &w.x.shape(), &want));
    }
    Ok(())
}

/// Step tensors (`B × n`, one per time step) for a batch of windows.
fn batch_steps(windows: &[&Window]) -> Vec<Tensor> {
    let [n, t_len] = windows[0].x.shape();
    (0..t_len)
        .map(|t| Tensor::from_fn(windows.len(), n, |b, j| windows[b].x.get(j, t)))
        .collect()
}

/// Nodes of one batch evaluation.
pub struct BatchLoss {
    pub total: Var,
    pub recon: Var,
    pub quantile: Var,
    pub q_hat: Var,
}

/// Builds the combined objective for a batch of windows and their quantile targets.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    hyper: &Hyperparameters,
    vars: &ModelVars,
    windows: &[&Window],
    q: &[f64],
    teacher_forcing: bool,
) -> Result<BatchLoss> {
    if windows.is_empty() || windows.len() != q.len() {
        return Err(Error::shape("batch", &[windows.len()], &[q.len()]));
    }
    let xs: Vec<Var> = batch_steps(windows).into_iter().map(|s| tape.leaf(s)).collect();
    let enc = encode_on_tape(tape, &vars.encoder, &xs)?;
    let rec = decode_on_tape(tape, &vars.decoder, &vars.projection, &enc, &xs, teacher_forcing)?;
    let recon = reconstruction_loss_on_tape(tape, &xs, &rec)?;
    let q_hat = forecaster_on_tape(tape, &vars.forecaster, enc.h_last, &enc.hidden)?;
    let target = tape.leaf(Tensor::new(q.len(), 1, q.to_vec())?);
    let quantile = tape.pinball(q_hat, target, hyper.tau)?;
    let a = tape.scale(recon, hyper.w);
    let b = tape.scale(quantile, 1.0 - hyper.w);
    let total = tape.add(a, b)?;
    Ok(BatchLoss {
        total,
        recon,
        quantile,
        q_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub quantile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation reconstruction term.
    pub recon: f64,
    /// Validation quantile term.
    pub quantile: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: DemmaModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,recon,quantile\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_loss, e.recon, e.quantile
        ));
    }
    out
}

fn quantile_targets(windows: &[Window], mixture: &MixtureParams) -> Result<Vec<f64>> {
    windows.iter().map(|w| quantile_transform(w.y, mixture)).collect()
}

/// One optimizer update on a batch; returns the pre-update loss.
fn train_step(
    model: &mut DemmaModel,
    opt: &mut Adam,
    windows: &[&Window],
    q: &[f64],
) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let (vars, leaves) = model.register(&mut tape);
    let loss = batch_loss_on_tape(&mut tape, &model.hyper, &vars, windows, q, true)?;
    let value = tape.value(loss.total).item()?;
    if !value.is_finite() {
        return Ok(None);
    }
    let grads = tape.backward(loss.total)?;
    let g: Vec<Tensor> = leaves
        .iter()
        .map(|&v| grads.wrt(v, tape.value(v)))
        .collect();
    if g.iter().any(|t| t.data().iter().any(|x| !x.is_finite())) {
        return Ok(None);
    }
    opt.update(&mut model.parameters_mut(), &g);
    Ok(Some(value))
}

fn new_optimizer(model: &DemmaModel, lr: f64) -> Adam {
    let shapes: Vec<[usize; 2]> = model.named_parameters().iter().map(|(_, t)| t.shape()).collect();
    Adam::new(lr, &shapes)
}

/// Mean combined loss over `windows`, evaluated in batches with the
/// autoregressive decoder.
pub fn evaluate_loss(
    model: &DemmaModel,
    windows: &[Window],
    mixture: &MixtureParams,
    batch_size: usize,
) -> Result<LossBreakdown> {
    if windows.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let q = quantile_targets(windows, mixture)?;
    let mut acc = [0.0; 3];
    for (chunk, qc) in windows.chunks(batch_size.max(1)).zip(q.chunks(batch_size.max(1))) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (vars, _) = model.register(&mut tape);
        let l = batch_loss_on_tape(&mut tape, &model.hyper, &vars, &refs, qc, false)?;
        let k = chunk.len() as f64;
        acc[0] += k * tape.value(l.total).item()?;
        acc[1] += k * tape.value(l.recon).item()?;
        acc[2] += k * tape.value(l.quantile).item()?;
    }
    let n = windows.len() as f64;
    Ok(LossBreakdown {
        total: acc[0] / n,
        recon: acc[1] / n,
        quantile: acc[2] / n,
    })
}

/// Minimizes the combined objective with Adam, keeping the parameters from the
/// epoch with the lowest validation loss. All randomness (initialization and
/// batch order) derives from `cfg.seed`.
pub fn train(
    hyper: Hyperparameters,
    train_set: &[Window],
    validation: &[Window],
    mixture: &MixtureParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hyper.validate()?;
    mixture.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Config("training and validation splits must be nonempty".into()));
    }
    for w in train_set.iter().chain(validation) {
        check_window(w, &hyper)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DemmaModel::init(hyper, &mut rng)?;
    let mut opt = new_optimizer(&model, cfg.learning_rate);
    let q = quantile_targets(train_set, mixture)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, DemmaModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let windows: Vec<&Window> = idx.iter().map(|&i| &train_set[i]).collect();
            let qb: Vec<f64> = idx.iter().map(|&i| q[i]).collect();
            let loss = train_step(&mut model, &mut opt, &windows, &qb)?.ok_or(Error::Divergence { epoch, batch })?;
            sum += loss * idx.len() as f64;
        }
        let val = evaluate_loss(&model, validation, mixture, cfg.batch_size)?;
        if !val.total.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0 });
        }
        log.push(EpochLog {
            epoch,
            train_loss: sum / train_set.len() as f64,
            val_loss: val.total,
            recon: val.recon,
            quantile: val.quantile,
        });
        if best.as_ref().map_or(true, |(_, b, _)| val.total < *b) {
            best = Some((epoch, val.total, model.clone()));
        }
    }
    let (best_epoch, best_val_loss, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_loss,
    })
}

/// Repeated updates on a single fixed batch; returns the loss before every step
/// and after the last one.
pub fn overfit_batch(
    model: &mut DemmaModel,
    windows: &[Window],
    mixture: &MixtureParams,
    learning_rate: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    for w in windows {
        check_window(w, &model.hyper)?;
    }
    let q = quantile_targets(windows, mixture)?;
    let refs: Vec<&Window> = windows.iter().collect();
    let mut opt = new_optimizer(model, learning_rate);
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let l = train_step(model, &mut opt, &refs, &q)?.ok_or(Error::Divergence { epoch: 0, batch: step })?;
        losses.push(l);
    }
    let mut tape = Tape::new();
    let (vars, _) = model.register(&mut tape);
    let l = batch_loss_on_tape(&mut tape, &model.hyper, &vars, &refs, &q, true)?;
    losses.push(tape.value(l.total).item()?);
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub q_hat: f64,
    pub y_hat: f64,
}

/// Forecast quantiles for standardized windows and their back-transformed values.
pub fn predict(model: &DemmaModel, mixture: &MixtureParams, windows: &[Window]) -> Result<Vec<Prediction>> {
    model.validate()?;
    mixture.validate()?;
    for w in windows {
        check_window(w, &model.hyper)?;
    }
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (vars, _) = model.register(&mut tape);
        let xs: Vec<Var> = batch_steps(&refs).into_iter().map(|s| tape.leaf(s)).collect();
        let enc = encode_on_tape(&mut tape, &vars.encoder, &xs)?;
        let q_hat = forecaster_on_tape(&mut tape, &vars.forecaster, enc.h_last, &enc.hidden)?;
        for &q in tape.value(q_hat).data() {
            out.push(Prediction {
                q_hat: q,
                y_hat: mixture_quantile(q, mixture)?,
            });
        }
    }
    Ok(out)
}

/// RMSE by target region. Regions with no members report `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total_rmse: f64,
    pub extreme_rmse: Option<f64>,
    pub moderate_rmse: Option<f64>,
    pub zero_rmse: Option<f64>,
    pub n_total: usize,
    pub n_extreme: usize,
    pub n_moderate: usize,
    pub n_zero: usize,
    pub split_quantile: f64,
    pub split_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Zero,
    Moderate,
    Extreme,
}

pub fn region_of(y: f64, threshold: f64) -> Region {
    if y == 0.0 {
        Region::Zero
    } else if y <= threshold {
        Region::Moderate
    } else {
        Region::Extreme
    }
}

pub fn evaluate(y_hat: &[f64], y: &[f64], split_quantile: f64) -> Result<MetricsReport> {
    if y_hat.len() != y.len() {
        return Err(Error::shape("evaluate", &[y_hat.len()], &[y.len()]));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("no predictions to evaluate".into()));
    }
    if !(0.0..=1.0).contains(&split_quantile) {
        return Err(Error::Config(format!("split quantile must lie in [0, 1], got {split_quantile}")));
    }
    if let Some(bad) = y.iter().chain(y_hat).find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite value {bad} in evaluation input")));
    }
    if let Some(bad) = y.iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!("targets must be >= 0, found {bad}")));
    }
    let threshold = empirical_quantile(y, split_quantile);
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (p, t) in y_hat.iter().zip(y) {
        let k = region_of(*t, threshold) as usize;
        sums[k] += (p - t).powi(2);
        counts[k] += 1;
    }
    let rmse = |k: usize| (counts[k] > 0).then(|| (sums[k] / counts[k] as f64).sqrt());
    Ok(MetricsReport {
        total_rmse: (sums.iter().sum::<f64>() / y.len() as f64).sqrt(),
        extreme_rmse: rmse(Region::Extreme as usize),
        moderate_rmse: rmse(Region::Moderate as usize),
        zero_rmse: rmse(Region::Zero as usize),
        n_total: y.len(),
        n_extreme: counts[Region::Extreme as usize],
        n_moderate: counts[Region::Moderate as usize],
        n_zero: counts[Region::Zero as usize],
        split_quantile,
        split_threshold: threshold,
    })
}

/// Finite-difference check of the full combined objective on one batch.
pub fn model_gradient_check(
    model: &DemmaModel,
    windows: &[Window],
    q: &[f64],
    step: f64,
    tolerance: f64,
    fault: Option<(Primitive, f64)>,
) -> Result<GradCheckReport> {
    let params: Vec<(String, Tensor)> = model
        .named_parameters()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let refs: Vec<&Window> = windows.iter().collect();
    gradient_check(
        &params,
        |tape, leaves| {
            let vars = model.bind(leaves);
            Ok(batch_loss_on_tape(tape, &model.hyper, &vars, &refs, q, true)?.total)
        },
        step,
        tolerance,
        fault,
    )
}

/// A tiny random model (n=2, T=3, m=4, d=2) with a two-window batch and
/// quantile targets, for gradient checking. Layer-norm parameters are moved
/// off their identity initialization so every adjoint is exercised.
pub fn gradcheck_fixture(seed: u64) -> Result<(DemmaModel, Vec<Window>, Vec<f64>)> {
    let hyper = Hyperparameters {
        n_predictors: 2,
        window: 3,
        hidden: 4,
        heads: 2,
        tau: 0.5,
        w: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DemmaModel::init(hyper, &mut rng)?;
    let f = &mut model.forecaster;
    for norm in std::iter::once(&mut f.attention_norm).chain(f.stages.iter_mut().map(|s| &mut s.norm)) {
        norm.gain = uniform(1, 4, 0.5, &mut rng).map(|x| 1.0 + x);
        norm.offset = uniform(1, 4, 0.5, &mut rng);
    }
    let windows: Vec<Window> = (0..2)
        .map(|i| Window {
            x: uniform(2, 3, 1.5, &mut rng),
            y: 0.0,
            start: i,
        })
        .collect();
    let q = vec![0.2, 0.85];
    Ok((model, windows, q))
}
