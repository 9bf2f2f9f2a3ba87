//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends a node holding its forward value and operand
//! references. Nodes are appended in evaluation order, so the tape is
//! topologically sorted and [`Tape::backward`] walks it once in reverse.
//!
//! Binary elementwise primitives accept a right operand of the same shape or
//! one that broadcasts along rows (`1 × c`), columns (`r × 1`) or both
//! (`1 × 1`).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of the differentiable primitives, used to target fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    MatMul,
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

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { src: Var, eps: f64 },
    Mse(Var, Var),
    Pinball { pred: Var, target: Var, tau: f64 },
    Scale(Var, f64),
    RowSum(Var),
    Sum(Var),
}

impl Op {
    fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Concat(_) => Primitive::Concat,
            Op::SliceCols { .. } | Op::SliceRows { .. } => Primitive::Slice,
            Op::Transpose(_) => Primitive::Transpose,
            Op::Sigmoid(_) => Primitive::Sigmoid,
            Op::Tanh(_) => Primitive::Tanh,
            Op::Relu(_) => Primitive::Relu,
            Op::Softmax(_) => Primitive::Softmax,
            Op::LayerNorm { .. } => Primitive::LayerNorm,
            Op::Mse(..) => Primitive::Mse,
            Op::Pinball { .. } => Primitive::Pinball,
            Op::Scale(..) => Primitive::Scale,
            Op::RowSum(_) => Primitive::RowSum,
            Op::Sum(_) => Primitive::Sum,
        })
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of `like`'s shape when `v` did not reach the loss.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(Primitive, f64)>,
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<Broadcast> {
    match (a, b) {
        _ if a == b => Ok(Broadcast::Same),
        ([_, c], [1, c2]) if c == c2 => Ok(Broadcast::Row),
        ([r, _], [r2, 1]) if r == r2 => Ok(Broadcast::Col),
        (_, [1, 1]) => Ok(Broadcast::Scalar),
        _ => Err(Error::shape(op, &a, &b)),
    }
}

#[inline]
fn bidx(kind: Broadcast, cols: usize, i: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Col => i / cols,
        Broadcast::Scalar => 0,
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[bidx(kind, cols, i)]))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape preserved")
}

/// Reduces a full-shape adjoint to the shape of a broadcast operand.
fn reduce_broadcast(g: &Tensor, kind: Broadcast, target: [usize; 2]) -> Tensor {
    if let Broadcast::Same = kind {
        return g.clone();
    }
    let cols = g.cols();
    let mut out = Tensor::zeros(target[0], target[1]);
    let od = out.data_mut();
    for (i, &v) in g.data().iter().enumerate() {
        od[bidx(kind, cols, i)] += v;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose adjoint rule for `primitive` is scaled by `factor`.
    /// Only useful as a negative control for gradient checking.
    pub fn with_fault(primitive: Primitive, factor: f64) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some((primitive, factor)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let kind = broadcast_kind(name, ta.shape(), tb.shape())?;
        let out = zip_broadcast(ta, tb, kind, f);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Concatenation along the last (column) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[0] != rows {
                return Err(Error::shape("concat", &self.value(*first).shape(), &s));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                for c in 0..t.cols() {
                    out.set(r, offset + c, t.get(r, c));
                }
            }
            offset += t.cols();
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, src: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(src);
        if start + width > t.cols() || width == 0 {
            return Err(Error::shape("slice_cols", &t.shape(), &[start, start + width]));
        }
        let out = Tensor::from_fn(t.rows(), width, |r, c| t.get(r, start + c));
        Ok(self.push(out, Op::SliceCols { src, start }))
    }

    /// Rows `start..start + height`.
    pub fn slice_rows(&mut self, src: Var, start: usize, height: usize) -> Result<Var> {
        let t = self.value(src);
        if start + height > t.rows() || height == 0 {
            return Err(Error::shape("slice_rows", &t.shape(), &[start, start + height]));
        }
        let out = Tensor::from_fn(height, t.cols(), |r, c| t.get(start + r, c));
        Ok(self.push(out, Op::SliceRows { src, start }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Softmax over each row, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (c, e) in exps.into_iter().enumerate() {
                out.set(r, c, e / total);
            }
        }
        self.push(out, Op::Softmax(a))
    }

    /// Per-row normalization to zero mean and unit variance, `ε` inside the root.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let cols = t.cols() as f64;
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            for (c, x) in row.iter().enumerate() {
                out.set(r, c, (x - mean) * inv);
            }
        }
        self.push(out, Op::LayerNorm { src: a, eps })
    }

    /// Mean of squared differences, a `1 × 1` result.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mse", &ta.shape(), &tb.shape()));
        }
        let n = ta.len() as f64;
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b)))
    }

    /// Mean pinball loss `max(τe, (τ−1)e)` with `e = target − pred`.
    pub fn pinball(&mut self, pred: Var, target: Var, tau: f64) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::shape("pinball", &tp.shape(), &tt.shape()));
        }
        let n = tp.len() as f64;
        let v = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| {
                let e = t - p;
                (tau * e).max((tau - 1.0) * e)
            })
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(v), Op::Pinball { pred, target, tau }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Sum over columns: `r × c → r × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_fn(t.rows(), 1, |r, _| t.row_slice(r).iter().sum());
        self.push(out, Op::RowSum(a))
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    /// Adjoints of `loss` with respect to every node that feeds it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let factor = match (self.fault, node.op.primitive()) {
                (Some((p, f)), Some(q)) if p == q => f,
                _ => 1.0,
            };
            let mut contributions: Vec<(Var, Tensor)> = Vec::with_capacity(2);
            self.adjoint(node, &g, &mut contributions);
            for (v, mut t) in contributions {
                if factor != 1.0 {
                    t.data_mut().iter_mut().for_each(|x| *x *= factor);
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn adjoint(&self, node: &Node, g: &Tensor, out: &mut Vec<(Var, Tensor)>) {
        let val = |v: Var| self.value(v);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let kind = broadcast_kind("add", val(*a).shape(), val(*b).shape()).expect("checked");
                out.push((*a, g.clone()));
                let gb = reduce_broadcast(g, kind, val(*b).shape());
                out.push((*b, if sign < 0.0 { gb.map(|x| -x) } else { gb }));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let kind = broadcast_kind("mul", ta.shape(), tb.shape()).expect("checked");
                out.push((*a, zip_broadcast(g, tb, kind, |gv, y| gv * y)));
                let full = Tensor::new(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(ta.data()).map(|(gv, x)| gv * x).collect(),
                )
                .expect("same shape");
                out.push((*b, reduce_broadcast(&full, kind, tb.shape())));
            }
            Op::MatMul(a, b) => {
                out.push((*a, g.matmul_nt(val(*b))));
                out.push((*b, val(*a).matmul_tn(g)));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    out.push((p, Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c))));
                    offset += w;
                }
            }
            Op::SliceCols { src, start } => {
                let s = val(*src).shape();
                let mut t = Tensor::zeros(s[0], s[1]);
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        t.set(r, start + c, g.get(r, c));
                    }
                }
                out.push((*src, t));
            }
            Op::SliceRows { src, start } => {
                let s = val(*src).shape();
                let mut t = Tensor::zeros(s[0], s[1]);
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        t.set(start + r, c, g.get(r, c));
                    }
                }
                out.push((*src, t));
            }
            Op::Transpose(a) => out.push((*a, g.transpose())),
            Op::Sigmoid(a) => out.push((*a, elementwise(g, &node.value, |gv, y| gv * y * (1.0 - y)))),
            Op::Tanh(a) => out.push((*a, elementwise(g, &node.value, |gv, y| gv * (1.0 - y * y)))),
            Op::Relu(a) => out.push((*a, elementwise(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }))),
            Op::Softmax(a) => {
                let y = &node.value;
                let mut t = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        t.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                out.push((*a, t));
            }
            Op::LayerNorm { src, eps } => {
                let x = val(*src);
                let cols = x.cols() as f64;
                let mut t = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let row = x.row_slice(r);
                    let mean = row.iter().sum::<f64>() / cols;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let gr = g.row_slice(r);
                    let gmean = gr.iter().sum::<f64>() / cols;
                    let gx = gr.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for c in 0..x.cols() {
                        t.set(r, c, inv * (gr[c] - gmean - xhat[c] * gx));
                    }
                }
                out.push((*src, t));
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let s = 2.0 * g.data()[0] / ta.len() as f64;
                let da = Tensor::new(
                    ta.rows(),
                    ta.cols(),
                    ta.data().iter().zip(tb.data()).map(|(x, y)| s * (x - y)).collect(),
                )
                .expect("same shape");
                out.push((*b, da.map(|x| -x)));
                out.push((*a, da));
            }
            Op::Pinball { pred, target, tau } => {
                let (tp, tt) = (val(*pred), val(*target));
                let s = g.data()[0] / tp.len() as f64;
                // dL/de is τ for e >= 0 (τ is also the convention at e = 0)
                let de = Tensor::new(
                    tp.rows(),
                    tp.cols(),
                    tp.data()
                        .iter()
                        .zip(tt.data())
                        .map(|(p, t)| s * if t - p >= 0.0 { *tau } else { tau - 1.0 })
                        .collect(),
                )
                .expect("same shape");
                out.push((*pred, de.map(|x| -x)));
                out.push((*target, de));
            }
            Op::Scale(a, f) => out.push((*a, g.map(|x| x * f))),
            Op::RowSum(a) => {
                let s = val(*a).shape();
                out.push((*a, Tensor::from_fn(s[0], s[1], |r, _| g.get(r, 0))));
            }
            Op::Sum(a) => {
                let s = val(*a).shape();
                out.push((*a, Tensor::filled(s[0], s[1], g.data()[0])));
            }
        }
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        g.rows(),
        g.cols(),
        g.data().iter().zip(other.data()).map(|(a, b)| f(*a, *b)).collect(),
    )
    .expect("same shape")
}
