//! Task heads and ranking metrics.
//!
//! [`ClassificationHead`] is a softmax layer over node representations.
//! [`NtnHead`] scores a (paper, author) pair with a neural tensor network:
//! `sigmoid(u . tanh(p' W[s] a + V [p; a] + b))` over `k` bilinear slices.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hgt::{Init, ParamSpec};
use crate::tensor::{sigmoid, ParamStore, Tape, Tensor, Var};

pub const NTN_SLICES: usize = 4;

/// Linear map `d -> C` followed by softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassificationHead {
    pub hidden: usize,
    pub classes: usize,
}

impl ClassificationHead {
    pub const W: &'static str = "head.cls.w";
    pub const B: &'static str = "head.cls.b";

    pub fn new(hidden: usize, classes: usize) -> Result<Self> {
        if hidden == 0 || classes == 0 {
            return Err(Error::Config("classification head needs a positive width and class count".into()));
        }
        Ok(ClassificationHead { hidden, classes })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (d, c) = (self.hidden, self.classes);
        vec![
            ParamSpec::new(Self::W.into(), &[d, c], Init::Glorot { fan_in: d, fan_out: c }),
            ParamSpec::new(Self::B.into(), &[c], Init::Zeros),
        ]
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        crate::hgt::init_params(&self.param_specs(), store, rng)
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, Self::W)?, tape.param(store, Self::B)?);
        tape.linear(h, w, b)
    }

    /// Mean cross-entropy of the rows of `h` against `labels`, plus the logits.
    pub fn classify_loss(&self, tape: &mut Tape, store: &ParamStore, h: Var, labels: &[usize]) -> Result<(Var, Var)> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: self.classes,
            });
        }
        let z = self.logits(tape, store, h)?;
        let loss = tape.cross_entropy(z, labels.to_vec())?;
        Ok((loss, z))
    }
}

/// Neural tensor network pair scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtnHead {
    pub hidden: usize,
    pub slices: usize,
}

impl NtnHead {
    pub const W: &'static str = "head.ntn.w";
    pub const V: &'static str = "head.ntn.v";
    pub const B: &'static str = "head.ntn.b";
    pub const U: &'static str = "head.ntn.u";

    pub fn new(hidden: usize, slices: usize) -> Result<Self> {
        if hidden == 0 || slices == 0 {
            return Err(Error::Config("NTN head needs a positive width and at least one slice".into()));
        }
        Ok(NtnHead { hidden, slices })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (d, k) = (self.hidden, self.slices);
        vec![
            ParamSpec::new(Self::W.into(), &[k, d, d], Init::Glorot { fan_in: d, fan_out: d }),
            ParamSpec::new(Self::V.into(), &[2 * d, k], Init::Glorot { fan_in: 2 * d, fan_out: k }),
            ParamSpec::new(Self::B.into(), &[k], Init::Zeros),
            ParamSpec::new(Self::U.into(), &[k, 1], Init::Glorot { fan_in: k, fan_out: 1 }),
        ]
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        crate::hgt::init_params(&self.param_specs(), store, rng)
    }

    /// Pre-sigmoid scores `[n x 1]` of the row pairs `(p[i], a[i])`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, p: Var, a: Var) -> Result<Var> {
        let w = tape.param(store, Self::W)?;
        let v = tape.param(store, Self::V)?;
        let b = tape.param(store, Self::B)?;
        let u = tape.param(store, Self::U)?;
        let bil = tape.bilinear(p, a, w)?;
        let pa = tape.concat_cols(p, a)?;
        let lin = tape.linear(pa, v, b)?;
        let pre = tape.add(bil, lin)?;
        let z = tape.tanh(pre)?;
        tape.matmul(z, u)
    }

    /// Mean binary cross-entropy of the pair scores against 0/1 targets.
    pub fn link_loss(&self, tape: &mut Tape, store: &ParamStore, p: Var, a: Var, targets: &[f64]) -> Result<(Var, Var)> {
        let z = self.logits(tape, store, p, a)?;
        let loss = tape.bce_with_logits(z, targets.to_vec())?;
        Ok((loss, z))
    }

    /// Link probability of a single pair.
    pub fn ntn_score(&self, store: &ParamStore, p: &[f64], a: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let pv = tape.leaf(Tensor::row(p.to_vec()));
        let av = tape.leaf(Tensor::row(a.to_vec()));
        let z = self.logits(&mut tape, store, pv, av)?;
        Ok(sigmoid(tape.value(z).data()[0]))
    }
}

/// Relevances of candidates listed by descending score. Ties keep input order.
pub fn rank_by_score(scores: &[f64], rels: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal));
    idx.into_iter().map(|i| rels[i]).collect()
}

fn dcg(rels: &[f64]) -> f64 {
    rels.iter()
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum()
}

/// DCG@k over IDCG@k with a `1/log2(rank + 1)` discount. A ranking with no
/// positive relevance scores 0.
pub fn ndcg(ranked: &[f64], k: Option<usize>) -> f64 {
    let k = k.unwrap_or(ranked.len()).min(ranked.len());
    let mut ideal = ranked.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let idcg = dcg(&ideal[..k]);
    if idcg <= 0.0 {
        return 0.0;
    }
    dcg(&ranked[..k]) / idcg
}

/// Reciprocal rank of the first positive.
pub fn mrr(ranked: &[bool]) -> Result<f64> {
    ranked
        .iter()
        .position(|&r| r)
        .map(|i| 1.0 / (i + 1) as f64)
        .ok_or(Error::NoPositive)
}

/// Mean reciprocal rank over queries, one term per query.
pub fn mean_mrr<Q: AsRef<[bool]>>(queries: &[Q]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::NoPositive);
    }
    let mut total = 0.0;
    for q in queries {
        total += mrr(q.as_ref())?;
    }
    Ok(total / queries.len() as f64)
}

/// Accuracy of row-wise argmax predictions.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row_slice(r)) == y)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
