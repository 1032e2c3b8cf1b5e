use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, View};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh approximation.
    #[default]
    Gelu,
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    ScaleByEntry(Var, Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    BlockMatMul(Var, Var),
    HeadDot(Var, Var),
    HeadWeight(Var, Var),
    SegmentSoftmax(Var, Vec<usize>),
    Unary(Var, Activation),
    LayerNorm(Var, Vec<f64>),
    Bilinear(Var, Var, Var),
    CrossEntropy(Var, Vec<usize>),
    BceWithLogits(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MulConst(x, _)
            | Op::Scale(x, _)
            | Op::GatherRows(x, _)
            | Op::ScatterAddRows(x, _)
            | Op::SegmentSoftmax(x, _)
            | Op::Unary(x, _)
            | Op::LayerNorm(x, _)
            | Op::CrossEntropy(x, _)
            | Op::BceWithLogits(x, _)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddBias(a, b)
            | Op::Mul(a, b)
            | Op::ScaleByEntry(a, b, _)
            | Op::ConcatCols(a, b)
            | Op::BlockMatMul(a, b)
            | Op::HeadDot(a, b)
            | Op::HeadWeight(a, b) => vec![*a, *b],
            Op::Bilinear(a, b, c) => vec![*a, *b, *c],
            Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Depends on at least one parameter, so its gradient is needed.
    live: bool,
}

/// Records a forward computation for reverse-mode differentiation. A tape is
/// single-use: build it, call [`Tape::backward`] once, drop it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

/// Gradients with respect to the loss of every recorded value that depends
/// on a parameter.
#[derive(Debug)]
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        s => Err(Error::ShapeMismatch(format!("expected a matrix, got shape {s:?}"))),
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(&[rows, cols], data).expect("shape computed from inputs")
}

fn acc<'a>(lo: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
    lo[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let live = matches!(op, Op::Param(_)) || op.inputs().iter().any(|v| self.nodes[v.0].live);
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input. Only values that depend on a parameter receive
    /// gradients, so leaves and anything computed from leaves alone are
    /// skipped by the backward pass.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let t = Tensor {
            grad: None,
            ..t
        };
        self.push(t, Op::Leaf)
    }

    /// Reads parameter `name`; repeated reads share one tape node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let src = store.by_index(idx).1;
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.clone(),
            grad: None,
        };
        let v = self.push(t, Op::Param(idx));
        self.params.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a))?;
        let (k2, n) = dims2(self.value(b))?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            View::dense(0, k, false),
            self.value(b).data(),
            View::dense(0, n, false),
            0.0,
            &mut out,
            View::dense(0, n, false),
        );
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b)))
    }

    /// `x W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = dims2(self.value(x))?;
        if self.value(b).numel() != m {
            return Err(mismatch("add_bias", self.value(x).shape(), self.value(b).shape()));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push(mat(n, m, out), Op::AddBias(x, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if tx.numel() != c.len() {
            return Err(Error::ShapeMismatch(format!(
                "mul_const: {} values for shape {:?}",
                c.len(),
                tx.shape()
            )));
        }
        let data = tx.data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let t = Tensor::new(tx.shape(), data)?;
        Ok(self.push(t, Op::MulConst(x, c)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|v| v * c).collect())?;
        Ok(self.push(t, Op::Scale(x, c)))
    }

    /// Multiplies `x` by the scalar `v[k]`.
    pub fn scale_by_entry(&mut self, x: Var, v: Var, k: usize) -> Result<Var> {
        let s = *self
            .value(v)
            .data()
            .get(k)
            .ok_or_else(|| Error::ShapeMismatch(format!("scale_by_entry: index {k} out of range")))?;
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|a| a * s).collect())?;
        Ok(self.push(t, Op::ScaleByEntry(x, v, k)))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout rate {p} must be below 1")));
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Rows `x[idx[0]], x[idx[1]], ...`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (n, d) = dims2(self.value(x))?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            if i >= n {
                return Err(Error::ShapeMismatch(format!("gather_rows: row {i} of {n}")));
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let e = idx.len();
        Ok(self.push(mat(e, d, out), Op::GatherRows(x, idx)))
    }

    /// `out[idx[i]] += x[i]` into `n` zero rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Vec<usize>, n: usize) -> Result<Var> {
        let (e, d) = dims2(self.value(x))?;
        if e != idx.len() {
            return Err(Error::ShapeMismatch(format!("scatter_add_rows: {e} rows, {} targets", idx.len())));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n * d];
        for (r, &t) in idx.iter().enumerate() {
            if t >= n {
                return Err(Error::ShapeMismatch(format!("scatter_add_rows: row {t} of {n}")));
            }
            for (o, v) in out[t * d..(t + 1) * d].iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        Ok(self.push(mat(n, d, out), Op::ScatterAddRows(x, idx)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concat_rows: no inputs".into()))?;
        let (_, d) = dims2(self.value(*first))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = dims2(self.value(p))?;
            if c != d {
                return Err(mismatch("concat_rows", self.value(*first).shape(), self.value(p).shape()));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(mat(rows, d, out), Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = dims2(self.value(a))?;
        let (n2, q) = dims2(self.value(b))?;
        if n != n2 {
            return Err(mismatch("concat_cols", self.value(a).shape(), self.value(b).shape()));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(&da[r * p..(r + 1) * p]);
            out.extend_from_slice(&db[r * q..(r + 1) * q]);
        }
        Ok(self.push(mat(n, p + q, out), Op::ConcatCols(a, b)))
    }

    /// Head-wise block-diagonal product: `x: [e, h*k]`, `w: [h, k, k]`; head
    /// `i` of each row is multiplied by `w[i]`.
    pub fn block_matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (e, d) = dims2(self.value(x))?;
        let (h, k) = match self.value(w).shape() {
            [h, k, k2] if k == k2 => (*h, *k),
            s => return Err(Error::ShapeMismatch(format!("block_matmul: weight shape {s:?}"))),
        };
        if h * k != d {
            return Err(mismatch("block_matmul", self.value(x).shape(), self.value(w).shape()));
        }
        let mut out = vec![0.0; e * d];
        for i in 0..h {
            gemm(
                e,
                k,
                k,
                self.value(x).data(),
                View::block(i * k, d),
                self.value(w).data(),
                View::dense(i * k * k, k, false),
                0.0,
                &mut out,
                View::block(i * k, d),
            );
        }
        Ok(self.push(mat(e, d, out), Op::BlockMatMul(x, w)))
    }

    /// Per-head dot products of matching rows: `[e, h*k] x [e, h*k] -> [e, h]`.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize) -> Result<Var> {
        let (e, d) = dims2(self.value(a))?;
        if self.value(a).shape() != self.value(b).shape() || heads == 0 || d % heads != 0 {
            return Err(mismatch("head_dot", self.value(a).shape(), self.value(b).shape()));
        }
        let k = d / heads;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; e * heads];
        for r in 0..e {
            for i in 0..heads {
                let s = r * d + i * k;
                out[r * heads + i] = da[s..s + k].iter().zip(&db[s..s + k]).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(mat(e, heads, out), Op::HeadDot(a, b)))
    }

    /// Weights head block `i` of `msg` row `r` by `attn[r, i]`.
    pub fn head_weight(&mut self, attn: Var, msg: Var) -> Result<Var> {
        let (e, h) = dims2(self.value(attn))?;
        let (e2, d) = dims2(self.value(msg))?;
        if e != e2 || h == 0 || d % h != 0 {
            return Err(mismatch("head_weight", self.value(attn).shape(), self.value(msg).shape()));
        }
        let k = d / h;
        let (wa, dm) = (self.value(attn).data(), self.value(msg).data());
        let mut out = vec![0.0; e * d];
        for r in 0..e {
            for i in 0..h {
                let w = wa[r * h + i];
                let s = r * d + i * k;
                for j in s..s + k {
                    out[j] = w * dm[j];
                }
            }
        }
        Ok(self.push(mat(e, d, out), Op::HeadWeight(attn, msg)))
    }

    /// Softmax over the rows sharing a group id, independently per column.
    /// Every group in `0..groups` must own at least one row.
    pub fn segment_softmax(&mut self, x: Var, seg: Vec<usize>, groups: usize) -> Result<Var> {
        let (e, h) = dims2(self.value(x))?;
        if seg.len() != e {
            return Err(Error::ShapeMismatch(format!("segment_softmax: {e} rows, {} group ids", seg.len())));
        }
        let mut count = vec![0usize; groups];
        for &g in &seg {
            if g >= groups {
                return Err(Error::ShapeMismatch(format!("segment_softmax: group {g} of {groups}")));
            }
            count[g] += 1;
        }
        if let Some(g) = count.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup(g));
        }
        let src = self.value(x).data();
        let mut max = vec![f64::NEG_INFINITY; groups * h];
        for r in 0..e {
            for c in 0..h {
                let m = &mut max[seg[r] * h + c];
                *m = m.max(src[r * h + c]);
            }
        }
        let mut out = vec![0.0; e * h];
        let mut sum = vec![0.0; groups * h];
        for r in 0..e {
            for c in 0..h {
                let v = (src[r * h + c] - max[seg[r] * h + c]).exp();
                out[r * h + c] = v;
                sum[seg[r] * h + c] += v;
            }
        }
        for r in 0..e {
            for c in 0..h {
                out[r * h + c] /= sum[seg[r] * h + c];
            }
        }
        Ok(self.push(mat(e, h, out), Op::SegmentSoftmax(x, seg)))
    }

    pub fn activation(&mut self, x: Var, f: Activation) -> Result<Var> {
        if f == Activation::Identity {
            return Ok(x);
        }
        let tx = self.value(x);
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|&v| f.apply(v)).collect())?;
        Ok(self.push(t, Op::Unary(x, f)))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// Row-wise standardisation without learned scale or shift.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (n, d) = dims2(self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * d];
        let mut inv = Vec::with_capacity(n);
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            inv.push(s);
        }
        Ok(self.push(mat(n, d, out), Op::LayerNorm(x, inv)))
    }

    /// `out[r, s] = p[r] . W[s] . a[r]` for `W: [k, d, d]`.
    pub fn bilinear(&mut self, p: Var, a: Var, w: Var) -> Result<Var> {
        let (n, d) = dims2(self.value(p))?;
        if self.value(a).shape() != self.value(p).shape() {
            return Err(mismatch("bilinear", self.value(p).shape(), self.value(a).shape()));
        }
        let k = match self.value(w).shape() {
            [k, d1, d2] if *d1 == d && *d2 == d => *k,
            s => return Err(Error::ShapeMismatch(format!("bilinear: weight shape {s:?} for width {d}"))),
        };
        let mut out = vec![0.0; n * k];
        let mut tmp = vec![0.0; n * d];
        let (pv, av, wv) = (self.value(p).data(), self.value(a).data(), self.value(w).data());
        for s in 0..k {
            gemm(n, d, d, pv, View::dense(0, d, false), wv, View::dense(s * d * d, d, false), 0.0, &mut tmp, View::dense(0, d, false));
            for r in 0..n {
                out[r * k + s] = tmp[r * d..(r + 1) * d].iter().zip(&av[r * d..(r + 1) * d]).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(mat(n, k, out), Op::Bilinear(p, a, w)))
    }

    /// Mean softmax cross-entropy of `logits: [n, C]` against class ids.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let (n, c) = dims2(self.value(logits))?;
        if labels.len() != n || n == 0 {
            return Err(Error::ShapeMismatch(format!("cross_entropy: {n} rows, {} labels", labels.len())));
        }
        let z = self.value(logits).data();
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::LabelOutOfRange { label: y, classes: c });
            }
            let row = &z[r * c..(r + 1) * c];
            total += logsumexp(row) - row[y];
        }
        Ok(self.push(Tensor::scalar(total / n as f64), Op::CrossEntropy(logits, labels)))
    }

    /// Mean binary cross-entropy on logits with 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::ShapeMismatch(format!("bce: {} logits, {} targets", z.len(), targets.len())));
        }
        let total: f64 = z
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let n = z.len() as f64;
        Ok(self.push(Tensor::scalar(total / n), Op::BceWithLogits(logits, targets)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::ShapeMismatch("mean of empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(x)))
    }

    /// Back-propagates from scalar `loss`, adding parameter gradients into
    /// `store` and returning the gradients of every recorded value.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        if self.value(loss).numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].live {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.propagate(i, g, lo, store)?;
        }
        Ok(Grads(grads))
    }

    fn propagate(&self, i: usize, g: &[f64], lo: &mut [Option<Vec<f64>>], store: &mut ParamStore) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(idx) => store.accumulate_grad(*idx, g),
            Op::MatMul(a, b) => {
                let (m, k) = dims2(val(*a))?;
                let (_, n) = dims2(val(*b))?;
                if self.nodes[a.0].live {
                    let da = acc(lo, *a, m * k);
                    gemm(m, n, k, g, View::dense(0, n, false), val(*b).data(), View::dense(0, n, true), 1.0, da, View::dense(0, k, false));
                }
                if self.nodes[b.0].live {
                    let db = acc(lo, *b, k * n);
                    gemm(k, m, n, val(*a).data(), View::dense(0, k, true), g, View::dense(0, n, false), 1.0, db, View::dense(0, n, false));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let d = acc(lo, *v, g.len());
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::AddBias(x, b) => {
                let d = acc(lo, *x, g.len());
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                let m = val(*b).numel();
                let db = acc(lo, *b, m);
                for row in g.chunks(m.max(1)) {
                    db.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                let da = acc(lo, *a, g.len());
                for j in 0..g.len() {
                    da[j] += g[j] * vb[j];
                }
                let db = acc(lo, *b, g.len());
                for j in 0..g.len() {
                    db[j] += g[j] * va[j];
                }
            }
            Op::MulConst(x, c) => {
                let d = acc(lo, *x, g.len());
                for j in 0..g.len() {
                    d[j] += g[j] * c[j];
                }
            }
            Op::Scale(x, c) => {
                let d = acc(lo, *x, g.len());
                d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
            Op::ScaleByEntry(x, v, k) => {
                let s = val(*v).data()[*k];
                let dot: f64 = g.iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                let d = acc(lo, *x, g.len());
                d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                let dv = acc(lo, *v, val(*v).numel());
                dv[*k] += dot;
            }
            Op::GatherRows(x, idx) => {
                let (n, d) = dims2(val(*x))?;
                let dx = acc(lo, *x, n * d);
                for (r, &t) in idx.iter().enumerate() {
                    for (o, v) in dx[t * d..(t + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *o += v;
                    }
                }
            }
            Op::ScatterAddRows(x, idx) => {
                let (e, d) = dims2(val(*x))?;
                let dx = acc(lo, *x, e * d);
                for (r, &t) in idx.iter().enumerate() {
                    for (o, v) in dx[r * d..(r + 1) * d].iter_mut().zip(&g[t * d..(t + 1) * d]) {
                        *o += v;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).numel();
                    let d = acc(lo, *p, n);
                    d.iter_mut().zip(&g[off..off + n]).for_each(|(x, y)| *x += y);
                    off += n;
                }
            }
            Op::ConcatCols(a, b) => {
                let (n, p) = dims2(val(*a))?;
                let (_, q) = dims2(val(*b))?;
                let w = p + q;
                let da = acc(lo, *a, n * p);
                for r in 0..n {
                    for j in 0..p {
                        da[r * p + j] += g[r * w + j];
                    }
                }
                let db = acc(lo, *b, n * q);
                for r in 0..n {
                    for j in 0..q {
                        db[r * q + j] += g[r * w + p + j];
                    }
                }
            }
            Op::BlockMatMul(x, w) => {
                let (e, d) = dims2(val(*x))?;
                let (h, k) = (val(*w).shape()[0], val(*w).shape()[1]);
                let dx = acc(lo, *x, e * d);
                for i in 0..h {
                    gemm(e, k, k, g, View::block(i * k, d), val(*w).data(), View::dense(i * k * k, k, true), 1.0, dx, View::block(i * k, d));
                }
                let dw = acc(lo, *w, h * k * k);
                for i in 0..h {
                    gemm(
                        k,
                        e,
                        k,
                        val(*x).data(),
                        View { offset: i * k, rs: 1, cs: d },
                        g,
                        View::block(i * k, d),
                        1.0,
                        dw,
                        View::dense(i * k * k, k, false),
                    );
                }
            }
            Op::HeadDot(a, b) => {
                let (e, d) = dims2(val(*a))?;
                let h = node.value.cols();
                let k = d / h;
                let (va, vb) = (val(*a).data(), val(*b).data());
                let da = acc(lo, *a, e * d);
                for r in 0..e {
                    for i in 0..h {
                        let gr = g[r * h + i];
                        let s = r * d + i * k;
                        for j in s..s + k {
                            da[j] += gr * vb[j];
                        }
                    }
                }
                let db = acc(lo, *b, e * d);
                for r in 0..e {
                    for i in 0..h {
                        let gr = g[r * h + i];
                        let s = r * d + i * k;
                        for j in s..s + k {
                            db[j] += gr * va[j];
                        }
                    }
                }
            }
            Op::HeadWeight(attn, msg) => {
                let (e, h) = dims2(val(*attn))?;
                let d = val(*msg).cols();
                let k = d / h;
                let (wa, dm) = (val(*attn).data(), val(*msg).data());
                let dattn = acc(lo, *attn, e * h);
                for r in 0..e {
                    for i in 0..h {
                        let s = r * d + i * k;
                        dattn[r * h + i] += (s..s + k).map(|j| g[j] * dm[j]).sum::<f64>();
                    }
                }
                let dmsg = acc(lo, *msg, e * d);
                for r in 0..e {
                    for i in 0..h {
                        let w = wa[r * h + i];
                        let s = r * d + i * k;
                        for j in s..s + k {
                            dmsg[j] += w * g[j];
                        }
                    }
                }
            }
            Op::SegmentSoftmax(x, seg) => {
                let (e, h) = dims2(&node.value)?;
                let y = node.value.data();
                let groups = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; groups * h];
                for r in 0..e {
                    for c in 0..h {
                        dot[seg[r] * h + c] += g[r * h + c] * y[r * h + c];
                    }
                }
                let dx = acc(lo, *x, e * h);
                for r in 0..e {
                    for c in 0..h {
                        let j = r * h + c;
                        dx[j] += y[j] * (g[j] - dot[seg[r] * h + c]);
                    }
                }
            }
            Op::Unary(x, f) => {
                let (xv, yv) = (val(*x).data(), node.value.data());
                let dx = acc(lo, *x, g.len());
                for j in 0..g.len() {
                    dx[j] += g[j] * f.derivative(xv[j], yv[j]);
                }
            }
            Op::LayerNorm(x, inv) => {
                let (n, d) = dims2(&node.value)?;
                let y = node.value.data();
                let dx = acc(lo, *x, n * d);
                for r in 0..n {
                    let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[r * d + j] += inv[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
            Op::Bilinear(p, a, w) => {
                let (n, d) = dims2(val(*p))?;
                let k = val(*w).shape()[0];
                let (pv, av, wv) = (val(*p).data(), val(*a).data(), val(*w).data());
                let mut tmp = vec![0.0; n * d];
                let mut scaled = vec![0.0; n * d];
                for s in 0..k {
                    // d out / d a = p W_s
                    gemm(n, d, d, pv, View::dense(0, d, false), wv, View::dense(s * d * d, d, false), 0.0, &mut tmp, View::dense(0, d, false));
                    let da = acc(lo, *a, n * d);
                    for r in 0..n {
                        let gr = g[r * k + s];
                        for j in 0..d {
                            da[r * d + j] += gr * tmp[r * d + j];
                        }
                    }
                    // d out / d p = a W_s^T
                    gemm(n, d, d, av, View::dense(0, d, false), wv, View::dense(s * d * d, d, true), 0.0, &mut tmp, View::dense(0, d, false));
                    let dp = acc(lo, *p, n * d);
                    for r in 0..n {
                        let gr = g[r * k + s];
                        for j in 0..d {
                            dp[r * d + j] += gr * tmp[r * d + j];
                        }
                    }
                    for r in 0..n {
                        let gr = g[r * k + s];
                        for j in 0..d {
                            scaled[r * d + j] = gr * pv[r * d + j];
                        }
                    }
                    let dw = acc(lo, *w, k * d * d);
                    gemm(d, n, d, &scaled, View::dense(0, d, true), av, View::dense(0, d, false), 1.0, dw, View::dense(s * d * d, d, false));
                }
            }
            Op::CrossEntropy(x, labels) => {
                let (n, c) = dims2(val(*x))?;
                let z = val(*x).data();
                let scale = g[0] / n as f64;
                let dx = acc(lo, *x, n * c);
                for (r, &y) in labels.iter().enumerate() {
                    let row = &z[r * c..(r + 1) * c];
                    let lse = logsumexp(row);
                    for j in 0..c {
                        let p = (row[j] - lse).exp();
                        dx[r * c + j] += scale * (p - if j == y { 1.0 } else { 0.0 });
                    }
                }
            }
            Op::BceWithLogits(x, targets) => {
                let z = val(*x).data();
                let scale = g[0] / z.len() as f64;
                let dx = acc(lo, *x, z.len());
                for j in 0..z.len() {
                    dx[j] += scale * (sigmoid(z[j]) - targets[j]);
                }
            }
            Op::Sum(x) => {
                let n = val(*x).numel();
                acc(lo, *x, n).iter_mut().for_each(|v| *v += g[0]);
            }
            Op::Mean(x) => {
                let n = val(*x).numel();
                let s = g[0] / n as f64;
                acc(lo, *x, n).iter_mut().for_each(|v| *v += s);
            }
        }
        Ok(())
    }
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::grad_check;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn store(entries: &[(&str, &[usize])], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape) in entries {
            s.insert(*name, rand_tensor(shape, &mut rng)).unwrap();
        }
        s
    }

    /// Reduces an output to a scalar with fixed random weights so every
    /// output entry contributes a distinct gradient.
    fn probe(t: &mut Tape, y: Var) -> Result<Var> {
        let n = t.value(y).numel();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let z = t.mul_const(y, w)?;
        t.sum(z)
    }

    fn check(entries: &[(&str, &[usize])], f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>) {
        let mut s = store(entries, 17);
        let report = grad_check(&mut s, 1e-5, f).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn grad_matmul_and_linear() {
        check(&[("x", &[3, 4]), ("w", &[4, 5]), ("b", &[5])], |t, s| {
            let (x, w, b) = (t.param(s, "x")?, t.param(s, "w")?, t.param(s, "b")?);
            let y = t.linear(x, w, b)?;
            probe(t, y)
        });
    }

    #[test]
    fn grad_elementwise() {
        check(&[("a", &[2, 3]), ("b", &[2, 3]), ("v", &[3])], |t, s| {
            let (a, b, v) = (t.param(s, "a")?, t.param(s, "b")?, t.param(s, "v")?);
            let p = t.mul(a, b)?;
            let q = t.add(p, a)?;
            let q = t.scale(q, 0.7)?;
            let q = t.scale_by_entry(q, v, 2)?;
            probe(t, q)
        });
    }

    #[test]
    fn grad_activations() {
        for f in [Activation::Gelu, Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            check(&[("x", &[4, 5])], move |t, s| {
                let x = t.param(s, "x")?;
                let y = t.activation(x, f)?;
                probe(t, y)
            });
        }
    }

    #[test]
    fn grad_gather_scatter_concat() {
        check(&[("x", &[4, 3]), ("y", &[2, 3]), ("z", &[4, 2])], |t, s| {
            let (x, y, z) = (t.param(s, "x")?, t.param(s, "y")?, t.param(s, "z")?);
            let g = t.gather_rows(x, vec![3, 0, 3, 1, 2])?;
            let sc = t.scatter_add_rows(g, vec![1, 1, 0, 2, 0], 3)?;
            let c = t.concat_rows(&[sc, y])?;
            let d = t.concat_cols(x, z)?;
            let a = probe(t, c)?;
            let b = probe(t, d)?;
            t.add(a, b)
        });
    }

    #[test]
    fn grad_head_ops() {
        check(&[("x", &[5, 6]), ("w", &[3, 2, 2]), ("q", &[5, 6])], |t, s| {
            let (x, w, q) = (t.param(s, "x")?, t.param(s, "w")?, t.param(s, "q")?);
            let m = t.block_matmul(x, w)?;
            let att = t.head_dot(m, q, 3)?;
            let sm = t.segment_softmax(att, vec![0, 1, 0, 2, 1], 3)?;
            let out = t.head_weight(sm, m)?;
            probe(t, out)
        });
    }

    #[test]
    fn grad_layer_norm_and_bilinear() {
        check(&[("p", &[3, 4]), ("a", &[3, 4]), ("w", &[2, 4, 4])], |t, s| {
            let (p, a, w) = (t.param(s, "p")?, t.param(s, "a")?, t.param(s, "w")?);
            let n = t.layer_norm(p)?;
            let b = t.bilinear(n, a, w)?;
            probe(t, b)
        });
    }

    #[test]
    fn grad_losses() {
        check(&[("z", &[4, 3]), ("u", &[5])], |t, s| {
            let (z, u) = (t.param(s, "z")?, t.param(s, "u")?);
            let ce = t.cross_entropy(z, vec![0, 2, 1, 2])?;
            let bce = t.bce_with_logits(u, vec![1.0, 0.0, 0.0, 1.0, 1.0])?;
            let m = t.mean(z)?;
            let x = t.add(ce, bce)?;
            t.add(x, m)
        });
    }

    #[test]
    fn segment_softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(&[4, 2], vec![1.0, 2.0, 3.0, -1.0, 1000.0, 0.0, 5.0, 5.0]).unwrap());
        let y = t.segment_softmax(x, vec![0, 0, 1, 1], 2).unwrap();
        let v = t.value(y).data();
        for c in 0..2 {
            assert!((v[c] + v[2 + c] - 1.0).abs() < 1e-12);
            assert!((v[4 + c] + v[6 + c] - 1.0).abs() < 1e-12);
        }
        assert!(t.value(y).is_finite());
        assert!(matches!(t.segment_softmax(x, vec![0, 0, 2, 2], 3), Err(Error::EmptyGroup(1))));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(t.cross_entropy(a, vec![0, 3]), Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
        let loss = t.sum(a).unwrap();
        let mut s = ParamStore::new();
        assert!(t.backward(loss, &mut s).is_ok());
        assert!(t.backward(a, &mut s).is_err());
    }

    #[test]
    fn repeated_param_reads_share_a_node() {
        let s = store(&[("w", &[2, 2])], 1);
        let mut t = Tape::new();
        let a = t.param(&s, "w").unwrap();
        let b = t.param(&s, "w").unwrap();
        assert_eq!(a, b);
        assert!(t.param(&s, "missing").is_err());
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::filled(&[100, 100], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = t.dropout(x, 0.3, &mut rng).unwrap();
        let mean = t.value(y).data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05);
        assert_eq!(t.dropout(x, 0.0, &mut rng).unwrap(), x);
    }
}
