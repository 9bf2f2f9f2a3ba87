//! Residual multi-head attention over the encoder states, two feedforward
//! Add & Norm stages and a sigmoid output head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auto_lstm::{affine_on_tape, uniform, Affine, AffineVars, EncodedWindow, NamedRefs};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const STAGE_COUNT: usize = 2;

fn next_var(it: &mut dyn Iterator<Item = Var>) -> Var {
    it.next().expect("parameter leaves out of step with parameter list")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// Each `m × m/d`.
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: Vec<AttentionHead>,
    /// `m × m`
    pub w_o: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct HeadVars {
    w_q: Var,
    w_k: Var,
    w_v: Var,
}

#[derive(Debug, Clone)]
pub struct AttentionVars {
    heads: Vec<HeadVars>,
    w_o: Var,
}

fn check_heads(m: usize, d: usize) -> Result<usize> {
    if d == 0 || m == 0 || m % d != 0 {
        return Err(Error::Config(format!(
            "head count {d} must divide hidden size {m}"
        )));
    }
    Ok(m / d)
}

impl AttentionParams {
    pub fn zeros(m: usize, d: usize) -> Result<Self> {
        let dh = check_heads(m, d)?;
        let head = AttentionHead {
            w_q: Tensor::zeros(m, dh),
            w_k: Tensor::zeros(m, dh),
            w_v: Tensor::zeros(m, dh),
        };
        Ok(Self {
            heads: vec![head; d],
            w_o: Tensor::zeros(m, m),
        })
    }

    pub fn init(m: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let dh = check_heads(m, d)?;
        let bound = 1.0 / (m as f64).sqrt();
        let heads = (0..d)
            .map(|_| AttentionHead {
                w_q: uniform(m, dh, bound, rng),
                w_k: uniform(m, dh, bound, rng),
                w_v: uniform(m, dh, bound, rng),
            })
            .collect();
        Ok(Self {
            heads,
            w_o: uniform(m, m, bound, rng),
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.w_o.rows()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let dh = check_heads(m, self.heads.len())?;
        for h in &self.heads {
            for t in [&h.w_q, &h.w_k, &h.w_v] {
                if t.shape() != [m, dh] {
                    return Err(Error::shape("attention projection", &t.shape(), &[m, dh]));
                }
            }
        }
        if self.w_o.shape() != [m, m] {
            return Err(Error::shape("attention output", &self.w_o.shape(), &[m, m]));
        }
        Ok(())
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut NamedRefs<'a>) {
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head{i}.w_q"), &h.w_q));
            out.push((format!("{prefix}.head{i}.w_k"), &h.w_k));
            out.push((format!("{prefix}.head{i}.w_v"), &h.w_v));
        }
        out.push((format!("{prefix}.w_o"), &self.w_o));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for h in &mut self.heads {
            out.extend([&mut h.w_q, &mut h.w_k, &mut h.w_v]);
        }
        out.push(&mut self.w_o);
    }

    pub(crate) fn bind(&self, it: &mut dyn Iterator<Item = Var>) -> AttentionVars {
        let heads = self
            .heads
            .iter()
            .map(|_| HeadVars {
                w_q: next_var(it),
                w_k: next_var(it),
                w_v: next_var(it),
            })
            .collect();
        AttentionVars {
            heads,
            w_o: next_var(it),
        }
    }
}

/// Layer-normalization gain and offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gain: Tensor,
    pub offset: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct NormVars {
    gain: Var,
    offset: Var,
}

impl NormParams {
    pub fn identity(m: usize) -> Self {
        Self {
            gain: Tensor::filled(1, m, 1.0),
            offset: Tensor::zeros(1, m),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        for t in [&self.gain, &self.offset] {
            if t.shape() != [1, m] {
                return Err(Error::shape("layer norm", &t.shape(), &[1, m]));
            }
        }
        Ok(())
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut NamedRefs<'a>) {
        out.push((format!("{prefix}.gain"), &self.gain));
        out.push((format!("{prefix}.offset"), &self.offset));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.gain, &mut self.offset]);
    }

    pub(crate) fn bind(&self, it: &mut dyn Iterator<Item = Var>) -> NormVars {
        NormVars {
            gain: next_var(it),
            offset: next_var(it),
        }
    }
}

/// Feedforward block `m → 4m → m` with ReLU, followed by Add & Norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub ff1: Affine,
    pub ff2: Affine,
    pub norm: NormParams,
}

#[derive(Debug, Clone, Copy)]
pub struct StageVars {
    ff1: AffineVars,
    ff2: AffineVars,
    norm: NormVars,
}

impl StageParams {
    pub fn zeros(m: usize) -> Self {
        Self {
            ff1: Affine::zeros(m, 4 * m),
            ff2: Affine::zeros(4 * m, m),
            norm: NormParams::identity(m),
        }
    }

    pub fn init(m: usize, rng: &mut impl Rng) -> Self {
        Self {
            ff1: Affine::init(m, 4 * m, rng),
            ff2: Affine::init(4 * m, m, rng),
            norm: NormParams::identity(m),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        self.ff1.validate("feedforward 1", m, 4 * m)?;
        self.ff2.validate("feedforward 2", 4 * m, m)?;
        self.norm.validate(m)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut NamedRefs<'a>) {
        self.ff1.collect(&format!("{prefix}.ff1"), out);
        self.ff2.collect(&format!("{prefix}.ff2"), out);
        self.norm.collect(&format!("{prefix}.norm"), out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.ff1.collect_mut(out);
        self.ff2.collect_mut(out);
        self.norm.collect_mut(out);
    }

    pub(crate) fn bind(&self, it: &mut dyn Iterator<Item = Var>) -> StageVars {
        StageVars {
            ff1: self.ff1.bind(it),
            ff2: self.ff2.bind(it),
            norm: self.norm.bind(it),
        }
    }
}

/// Everything downstream of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterParams {
    pub attention: AttentionParams,
    pub attention_norm: NormParams,
    pub stages: Vec<StageParams>,
    /// `m → 1`, followed by a sigmoid.
    pub head: Affine,
}

#[derive(Debug, Clone)]
pub struct ForecasterVars {
    attention: AttentionVars,
    attention_norm: NormVars,
    stages: Vec<StageVars>,
    head: AffineVars,
}

impl ForecasterParams {
    pub fn zeros(m: usize, d: usize) -> Result<Self> {
        Ok(Self {
            attention: AttentionParams::zeros(m, d)?,
            attention_norm: NormParams::identity(m),
            stages: (0..STAGE_COUNT).map(|_| StageParams::zeros(m)).collect(),
            head: Affine::zeros(m, 1),
        })
    }

    pub fn init(m: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let attention = AttentionParams::init(m, d, rng)?;
        let stages = (0..STAGE_COUNT).map(|_| StageParams::init(m, rng)).collect();
        Ok(Self {
            attention,
            attention_norm: NormParams::identity(m),
            stages,
            head: Affine::init(m, 1, rng),
        })
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        self.attention.validate(m)?;
        self.attention_norm.validate(m)?;
        if self.stages.len() != STAGE_COUNT {
            return Err(Error::shape("stages", &[self.stages.len()], &[STAGE_COUNT]));
        }
        for s in &self.stages {
            s.validate(m)?;
        }
        self.head.validate("head", m, 1)
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut NamedRefs<'a>) {
        self.attention.collect(&format!("{prefix}.attention"), out);
        self.attention_norm.collect(&format!("{prefix}.attention_norm"), out);
        for (i, s) in self.stages.iter().enumerate() {
            s.collect(&format!("{prefix}.stage{i}"), out);
        }
        self.head.collect(&format!("{prefix}.head"), out);
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.attention.collect_mut(out);
        self.attention_norm.collect_mut(out);
        for s in &mut self.stages {
            s.collect_mut(out);
        }
        self.head.collect_mut(out);
    }

    pub(crate) fn bind(&self, it: &mut dyn Iterator<Item = Var>) -> ForecasterVars {
        ForecasterVars {
            attention: self.attention.bind(it),
            attention_norm: self.attention_norm.bind(it),
            stages: self.stages.iter().map(|s| s.bind(it)).collect(),
            head: self.head.bind(it),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> ForecasterVars {
        let mut refs = Vec::new();
        self.collect("", &mut refs);
        let leaves: Vec<Var> = refs.into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        self.bind(&mut leaves.into_iter())
    }
}

/// Attention output (`B × m`) and per-head weights (`B × T` each).
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Batched multi-head attention with the query taken from `h_last` and keys
/// and values from every hidden state.
pub fn multi_head_attention_on_tape(
    tape: &mut Tape,
    p: &AttentionVars,
    h_last: Var,
    hidden: &[Var],
) -> Result<AttentionOutput> {
    if hidden.is_empty() {
        return Err(Error::Contract("attention over an empty sequence".into()));
    }
    let mut head_outputs = Vec::with_capacity(p.heads.len());
    let mut weights = Vec::with_capacity(p.heads.len());
    for h in &p.heads {
        let q = tape.matmul(h_last, h.w_q)?;
        let dh = tape.value(q).cols() as f64;
        let mut scores = Vec::with_capacity(hidden.len());
        let mut values = Vec::with_capacity(hidden.len());
        for &ht in hidden {
            let k = tape.matmul(ht, h.w_k)?;
            let qk = tape.mul(q, k)?;
            let s = tape.row_sum(qk);
            scores.push(tape.scale(s, 1.0 / dh.sqrt()));
            values.push(tape.matmul(ht, h.w_v)?);
        }
        let scores = tape.concat(&scores)?;
        let a = tape.softmax_rows(scores);
        let mut acc: Option<Var> = None;
        for (t, &v) in values.iter().enumerate() {
            let at = tape.slice_cols(a, t, 1)?;
            let term = tape.mul(v, at)?;
            acc = Some(match acc {
                Some(x) => tape.add(x, term)?,
                None => term,
            });
        }
        head_outputs.push(acc.expect("nonempty"));
        weights.push(a);
    }
    let cat = tape.concat(&head_outputs)?;
    let output = tape.matmul(cat, p.w_o)?;
    Ok(AttentionOutput { output, weights })
}

fn add_norm(tape: &mut Tape, p: &NormVars, residual: Var, x: Var) -> Result<Var> {
    let s = tape.add(residual, x)?;
    let n = tape.layer_norm_rows(s, LAYER_NORM_EPS);
    let n = tape.mul(n, p.gain)?;
    tape.add(n, p.offset)
}

/// Predicted quantile `q̂ ∈ (0, 1)` as a `B × 1` node.
pub fn forecaster_on_tape(
    tape: &mut Tape,
    p: &ForecasterVars,
    h_last: Var,
    hidden: &[Var],
) -> Result<Var> {
    let att = multi_head_attention_on_tape(tape, &p.attention, h_last, hidden)?;
    let mut z = add_norm(tape, &p.attention_norm, h_last, att.output)?;
    for s in &p.stages {
        let f = affine_on_tape(tape, &s.ff1, z)?;
        let f = tape.relu(f);
        let f = affine_on_tape(tape, &s.ff2, f)?;
        z = add_norm(tape, &s.norm, z, f)?;
    }
    let logit = affine_on_tape(tape, &p.head, z)?;
    Ok(tape.sigmoid(logit))
}

fn window_vars(tape: &mut Tape, enc: &EncodedWindow) -> (Var, Vec<Var>) {
    let h_last = tape.leaf(enc.h_last.clone());
    let hidden = (0..enc.hidden.rows())
        .map(|t| tape.leaf(Tensor::row(enc.hidden.row_slice(t).to_vec())))
        .collect();
    (h_last, hidden)
}

/// Single-window attention: the `1 × m` output and one weight row per head.
pub fn multi_head_attention(
    h_last: &Tensor,
    hidden: &Tensor,
    p: &AttentionParams,
) -> Result<(Tensor, Vec<Tensor>)> {
    let m = p.hidden_size();
    p.validate(m)?;
    if h_last.shape() != [1, m] || hidden.cols() != m {
        return Err(Error::shape("attention", &h_last.shape(), &hidden.shape()));
    }
    let enc = EncodedWindow {
        hidden: hidden.clone(),
        h_last: h_last.clone(),
        c_last: Tensor::zeros(1, m),
    };
    let mut tape = Tape::new();
    let mut refs = Vec::new();
    p.collect("", &mut refs);
    let leaves: Vec<Var> = refs.into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let vars = p.bind(&mut leaves.into_iter());
    let (hv, hs) = window_vars(&mut tape, &enc);
    let out = multi_head_attention_on_tape(&mut tape, &vars, hv, &hs)?;
    let weights = out.weights.iter().map(|&w| tape.value(w).clone()).collect();
    Ok((tape.value(out.output).clone(), weights))
}

/// Predicted quantile for one encoded window.
pub fn forecaster_forward(enc: &EncodedWindow, p: &ForecasterParams) -> Result<f64> {
    let m = enc.h_last.cols();
    p.validate(m)?;
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let (hv, hs) = window_vars(&mut tape, enc);
    let q = forecaster_on_tape(&mut tape, &vars, hv, &hs)?;
    tape.value(q).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auto_lstm::{encode, encode_on_tape, LstmParams};
    use crate::gradcheck::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn head_count_must_divide_width() {
        assert!(matches!(AttentionParams::zeros(6, 4), Err(Error::Config(_))));
        assert!(AttentionParams::zeros(8, 4).is_ok());
    }

    #[test]
    fn single_key_has_unit_weight() {
        let mut r = rng();
        let p = AttentionParams::init(4, 2, &mut r);
        let p = p.unwrap();
        let hidden = uniform(1, 4, 1.0, &mut r);
        let (out, weights) = multi_head_attention(&hidden, &hidden, &p).unwrap();
        for w in &weights {
            assert_eq!(w.data(), &[1.0]);
        }
        let v: Vec<f64> = p
            .heads
            .iter()
            .flat_map(|h| hidden.matmul(&h.w_v).unwrap().into_data())
            .collect();
        let expected = Tensor::row(v).matmul(&p.w_o).unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_scores_average_values() {
        let mut r = rng();
        let mut p = AttentionParams::init(4, 2, &mut r).unwrap();
        for h in &mut p.heads {
            h.w_k = Tensor::zeros(4, 2);
        }
        let hidden = uniform(5, 4, 1.0, &mut r);
        let h_last = Tensor::row(hidden.row_slice(4).to_vec());
        let (out, weights) = multi_head_attention(&h_last, &hidden, &p).unwrap();
        for w in &weights {
            assert!(w.data().iter().all(|x| (x - 0.2).abs() < 1e-15));
        }
        let mean = Tensor::from_fn(1, 4, |_, j| (0..5).map(|t| hidden.get(t, j)).sum::<f64>() / 5.0);
        let v: Vec<f64> = p
            .heads
            .iter()
            .flat_map(|h| mean.matmul(&h.w_v).unwrap().into_data())
            .collect();
        let expected = Tensor::row(v).matmul(&p.w_o).unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        // Uniform weights make the output invariant to reordering rows 1..T−1.
        let perm = Tensor::from_fn(5, 4, |t, j| {
            let src = [2, 0, 3, 1, 4][t];
            hidden.get(src, j)
        });
        let (out2, _) = multi_head_attention(&h_last, &perm, &p).unwrap();
        for (a, b) in out.data().iter().zip(out2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_are_distributions() {
        let mut r = rng();
        let p = AttentionParams::init(8, 4, &mut r).unwrap();
        let hidden = uniform(6, 8, 2.0, &mut r);
        let h_last = Tensor::row(hidden.row_slice(5).to_vec());
        let (_, weights) = multi_head_attention(&h_last, &hidden, &p).unwrap();
        assert_eq!(weights.len(), 4);
        for w in weights {
            assert!(w.data().iter().all(|&x| x >= 0.0));
            assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_network_outputs_sigmoid_of_head_bias() {
        let mut p = ForecasterParams::zeros(4, 2).unwrap();
        p.head = Affine::init(4, 1, &mut rng());
        let b = p.head.bias.get(0, 0);
        let enc = encode(&Tensor::from_fn(2, 3, |i, j| (i + j) as f64), &LstmParams::zeros(2, 4)).unwrap();
        let q = forecaster_forward(&enc, &p).unwrap();
        assert!((q - 1.0 / (1.0 + (-b).exp())).abs() < 1e-15);
    }

    #[test]
    fn output_inside_unit_interval() {
        let mut r = rng();
        let lstm = LstmParams::init(3, 8, &mut r);
        let p = ForecasterParams::init(8, 4, &mut r).unwrap();
        for _ in 0..20 {
            let enc = encode(&uniform(3, 7, 3.0, &mut r), &lstm).unwrap();
            let q = forecaster_forward(&enc, &p).unwrap();
            assert!(q > 0.0 && q < 1.0);
        }
    }

    #[test]
    fn forecaster_gradients_check() {
        let mut r = rng();
        let lstm = LstmParams::init(2, 4, &mut r);
        let mut p = ForecasterParams::init(4, 2, &mut r).unwrap();
        // Move norm parameters off their identity initialization so their
        // adjoints are exercised at a generic point.
        for t in [&mut p.attention_norm.gain, &mut p.stages[0].norm.offset] {
            *t = uniform(1, 4, 1.0, &mut r);
        }
        let steps: Vec<Tensor> = (0..3).map(|_| uniform(2, 2, 1.0, &mut r)).collect();
        let targets = Tensor::from_fn(2, 1, |i, _| 0.3 + 0.4 * i as f64);
        let mut refs = Vec::new();
        lstm.collect("encoder", &mut refs);
        p.collect("forecaster", &mut refs);
        let params: Vec<(String, Tensor)> = refs.into_iter().map(|(n, t)| (n, t.clone())).collect();
        let report = gradient_check(
            &params,
            |tape, v| {
                let mut it = v.iter().copied();
                let ev = lstm.bind(&mut it);
                let fv = p.bind(&mut it);
                let xs: Vec<Var> = steps.iter().map(|s| tape.leaf(s.clone())).collect();
                let enc = encode_on_tape(tape, &ev, &xs)?;
                let q = forecaster_on_tape(tape, &fv, enc.h_last, &enc.hidden)?;
                let t = tape.leaf(targets.clone());
                tape.mse(q, t)
            },
            1e-5,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed, "{report:#?}");
    }
}
