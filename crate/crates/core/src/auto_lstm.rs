//! LSTM encoder and reverse-order reconstruction decoder.
//!
//! Tape-level functions work on batches: one `B × n` tensor per time step.
//! The single-window wrappers take an `n × T` window whose column `t` is
//! `x_t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors of a component, in binding order.
pub(crate) type NamedRefs<'a> = Vec<(String, &'a Tensor)>;

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

fn next_var(it: &mut dyn Iterator<Item = Var>) -> Var {
    it.next().expect("parameter leaves out of step with parameter list")
}

/// Gate weights laid out as `[input | forget | cell | output]` blocks of width `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `n × 4m`
    pub w_ih: Tensor,
    /// `m × 4m`
    pub w_hh: Tensor,
    /// `1 × 4m`
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            input_size: n,
            hidden_size: m,
            w_ih: Tensor::zeros(n, 4 * m),
            w_hh: Tensor::zeros(m, 4 * m),
            bias: Tensor::zeros(1, 4 * m),
        }
    }

    /// Uniform in `±1/√m` with the forget-gate bias set to 1.
    pub fn init(n: usize, m: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (m as f64).sqrt();
        let mut bias = uniform(1, 4 * m, bound, rng);
        for j in m..2 * m {
            bias.set(0, j, 1.0);
        }
        Self {
            input_size: n,
            hidden_size: m,
            w_ih: uniform(n, 4 * m, bound, rng),
            w_hh: uniform(m, 4 * m, bound, rng),
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.input_size, self.hidden_size);
        for (name, t, want) in [
            ("lstm w_ih", &self.w_ih, [n, 4 * m]),
            ("lstm w_hh", &self.w_hh, [m, 4 * m]),
            ("lstm bias", &self.bias, [1, 4 * m]),
        ] {
            if t.shape() != want {
                return Err(Error::shape(name, &t.shape(), &want));
            }
        }
        Ok(())
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut NamedRefs<'a>) {
        out.push((format!("{prefix}.w_ih"), &self.w_ih));
        out.push((format!("{prefix}.w_hh"), &self.w_hh));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.w_ih, &mut self.w_hh, &mut self.bias]);
    }

    pub(crate) fn bind(&self, it: &mut dyn Iterator<Item = Var>) -> LstmVars {
        LstmVars {
            w_ih: next_var(it),
            w_hh: next_var(it),
            bias: next_var(it),
            hidden_size: self.hidden_size,
        }
    }

    pub fn register(&self, tape: &mut Tape) -> LstmVars {
        let mut refs = Vec::new();
        self.collect("", &mut refs);
        let leaves: Vec<Var> = refs.into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        self.bind(&mut leaves.into_iter())
    }
}

/// `y = x·W + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct AffineVars {
    pub weight: Var,
    pub bias: Var,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    /// Uniform in `±1/√input`.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform(input, output, bound, rng),
            bias: uniform(1, output, bound, rng),
        }
    }

    pub fn validate(&self, name: &'static str, input: usize, output: usize) -> Result<()> {
        if self.weight.shape() != [input, output] {
            return Err(Error::shape(name, &self.weight.shape(), &[input, output]));
        }
        if self.bias.shape() != [1, output] {
            return Err(Error::shape(name, &self.bias.shape(), &[1, output]));
        }
        Ok(())
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut NamedRefs<'a>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.weight, &mut self.bias]);
    }

    pub(crate) fn bind(&self, it: &mut dyn Iterator<Item = Var>) -> AffineVars {
        AffineVars {
            weight: next_var(it),
            bias: next_var(it),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> AffineVars {
        AffineVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

pub fn affine_on_tape(tape: &mut Tape, p: &AffineVars, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.weight)?;
    tape.add(y, p.bias)
}

/// One LSTM step for a batch: `x` is `B × n`, `h` and `c` are `B × m`.
pub fn lstm_cell_on_tape(tape: &mut Tape, p: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let m = p.hidden_size;
    let a = tape.matmul(x, p.w_ih)?;
    let b = tape.matmul(h, p.w_hh)?;
    let z = tape.add(a, b)?;
    let z = tape.add(z, p.bias)?;
    let zi = tape.slice_cols(z, 0, m)?;
    let zf = tape.slice_cols(z, m, m)?;
    let zg = tape.slice_cols(z, 2 * m, m)?;
    let zo = tape.slice_cols(z, 3 * m, m)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Hidden states of a batch, one `B × m` node per time step.
#[derive(Debug, Clone)]
pub struct EncodedVars {
    pub hidden: Vec<Var>,
    pub h_last: Var,
    pub c_last: Var,
}

pub fn encode_on_tape(tape: &mut Tape, p: &LstmVars, xs: &[Var]) -> Result<EncodedVars> {
    let first = *xs
        .first()
        .ok_or_else(|| Error::Contract("window length must be at least 1".into()))?;
    let batch = tape.value(first).rows();
    let mut h = tape.leaf(Tensor::zeros(batch, p.hidden_size));
    let mut c = tape.leaf(Tensor::zeros(batch, p.hidden_size));
    let mut hidden = Vec::with_capacity(xs.len());
    for &x in xs {
        (h, c) = lstm_cell_on_tape(tape, p, x, h, c)?;
        hidden.push(h);
    }
    Ok(EncodedVars {
        hidden,
        h_last: h,
        c_last: c,
    })
}

/// Reconstructs `xs` in reverse order starting from the encoder's final state.
/// The result is returned aligned with `xs`: element `t` reconstructs `xs[t]`.
pub fn decode_on_tape(
    tape: &mut Tape,
    dec: &LstmVars,
    proj: &AffineVars,
    enc: &EncodedVars,
    xs: &[Var],
    teacher_forcing: bool,
) -> Result<Vec<Var>> {
    let t_len = xs.len();
    let x0 = tape.value(xs[0]);
    let (batch, n) = (x0.rows(), x0.cols());
    let mut input = tape.leaf(Tensor::zeros(batch, n));
    let (mut h, mut c) = (enc.h_last, enc.c_last);
    let mut out = vec![input; t_len];
    for k in 0..t_len {
        (h, c) = lstm_cell_on_tape(tape, dec, input, h, c)?;
        let rec = affine_on_tape(tape, proj, h)?;
        let target = t_len - 1 - k;
        out[target] = rec;
        input = if teacher_forcing { xs[target] } else { rec };
    }
    Ok(out)
}

/// `(1/B) Σ_b Σ_t ‖x_t − x̂_t‖²` for one batch.
pub fn reconstruction_loss_on_tape(tape: &mut Tape, xs: &[Var], recon: &[Var]) -> Result<Var> {
    if xs.len() != recon.len() || xs.is_empty() {
        return Err(Error::shape("reconstruction_loss", &[xs.len()], &[recon.len()]));
    }
    let mut total: Option<Var> = None;
    for (&x, &r) in xs.iter().zip(recon) {
        let d = tape.sub(r, x)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let batch = tape.value(xs[0]).rows() as f64;
    Ok(tape.scale(total.expect("nonempty"), 1.0 / batch))
}

/// Column `t` of an `n × T` window as a `1 × n` step tensor.
pub fn window_steps(window: &Tensor) -> Vec<Tensor> {
    (0..window.cols())
        .map(|t| Tensor::from_fn(1, window.rows(), |_, j| window.get(j, t)))
        .collect()
}

fn steps_to_window(steps: &[Tensor]) -> Tensor {
    let n = steps.first().map_or(0, Tensor::cols);
    Tensor::from_fn(n, steps.len(), |j, t| steps[t].get(0, j))
}

/// Encoder output for a single window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWindow {
    /// `T × m`, row `t` is the state after consuming `x_t`.
    pub hidden: Tensor,
    pub h_last: Tensor,
    pub c_last: Tensor,
}

/// Single-sample LSTM step on `1 × n` and `1 × m` row vectors.
pub fn lstm_cell(x: &Tensor, h: &Tensor, c: &Tensor, p: &LstmParams) -> Result<(Tensor, Tensor)> {
    p.validate()?;
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let (xv, hv, cv) = (tape.leaf(x.clone()), tape.leaf(h.clone()), tape.leaf(c.clone()));
    let (h_new, c_new) = lstm_cell_on_tape(&mut tape, &vars, xv, hv, cv)?;
    Ok((tape.value(h_new).clone(), tape.value(c_new).clone()))
}

fn check_window(window: &Tensor, p: &LstmParams) -> Result<()> {
    p.validate()?;
    if window.rows() != p.input_size || window.cols() == 0 {
        return Err(Error::shape("window", &window.shape(), &[p.input_size, window.cols().max(1)]));
    }
    Ok(())
}

pub fn encode(window: &Tensor, p: &LstmParams) -> Result<EncodedWindow> {
    check_window(window, p)?;
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let xs: Vec<Var> = window_steps(window).into_iter().map(|s| tape.leaf(s)).collect();
    let enc = encode_on_tape(&mut tape, &vars, &xs)?;
    let rows: Vec<Vec<f64>> = enc.hidden.iter().map(|&h| tape.value(h).data().to_vec()).collect();
    Ok(EncodedWindow {
        hidden: Tensor::from_rows(&rows)?,
        h_last: tape.value(enc.h_last).clone(),
        c_last: tape.value(enc.c_last).clone(),
    })
}

/// Reverse-order reconstruction of `window` (`n × T`), returned aligned with it.
pub fn decode_reconstruct(
    enc: &EncodedWindow,
    window: &Tensor,
    dec: &LstmParams,
    proj: &Affine,
    teacher_forcing: bool,
) -> Result<Tensor> {
    check_window(window, dec)?;
    proj.validate("projection", dec.hidden_size, dec.input_size)?;
    let mut tape = Tape::new();
    let dv = dec.register(&mut tape);
    let pv = proj.register(&mut tape);
    let xs: Vec<Var> = window_steps(window).into_iter().map(|s| tape.leaf(s)).collect();
    let h_last = tape.leaf(enc.h_last.clone());
    let c_last = tape.leaf(enc.c_last.clone());
    let ev = EncodedVars {
        hidden: Vec::new(),
        h_last,
        c_last,
    };
    let rec = decode_on_tape(&mut tape, &dv, &pv, &ev, &xs, teacher_forcing)?;
    let steps: Vec<Tensor> = rec.iter().map(|&v| tape.value(v).clone()).collect();
    Ok(steps_to_window(&steps))
}

/// Batch mean of squared window norms. Both inputs are lists of `n × T` windows.
pub fn reconstruction_loss(x: &[Tensor], x_hat: &[Tensor]) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::shape("reconstruction_loss", &[x.len()], &[x_hat.len()]));
    }
    let mut total = 0.0;
    for (a, b) in x.iter().zip(x_hat) {
        if a.shape() != b.shape() {
            return Err(Error::shape("reconstruction_loss", &a.shape(), &b.shape()));
        }
        total += a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    }
    Ok(total / x.len() as f64)
}
