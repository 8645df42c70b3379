//! Reverse-mode differentiation over a flat op tape.
//!
//! Values are computed eagerly when an op is recorded; `backward` walks the
//! tape in reverse and accumulates gradients. Every op validates shapes and
//! rejects non-finite outputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kernels::{mm_nn, mm_nt, mm_tn, sigmoid, softplus};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Epsilon inside the layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: T },
    Relu { x: NodeId },
    Softmax { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, row_stats: Vec<(T, T)> },
    Gather { table: NodeId, indices: Vec<u32> },
    Concat { parts: Vec<NodeId> },
    Dropout { x: NodeId, mask: Vec<T> },
    Attention(Box<AttentionOp<T>>),
    RowDot { a: NodeId, b: NodeId },
    WeightedSum { x: NodeId, weights: Vec<T> },
    LogisticLoss { scores: NodeId, signs: Vec<i8>, weights: Vec<T> },
    SoftmaxXent { logits: NodeId, targets: Vec<u32>, probs: Vec<T> },
}

struct AttentionOp<T> {
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    seq_len: usize,
    pads: Vec<usize>,
    /// Softmax attention weights, `[batch, head, query, key]`, zeros at
    /// masked entries.
    probs: Vec<T>,
}

struct Node<T> {
    value: Tensor<T>,
    needs_grad: bool,
    op: Op<T>,
}

/// Flat computation graph with eager forward values.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Attention weights of an attention node: `(probs, batch, heads, seq_len)`.
    pub fn attention_probs(&self, id: NodeId) -> Option<(&[T], usize, usize, usize)> {
        match &self.nodes[id.0].op {
            Op::Attention(at) => Some((&at.probs, at.pads.len(), at.heads, at.seq_len)),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<T>, needs_grad: bool, op: Op<T>, name: &'static str) -> Result<NodeId> {
        if let Some(pos) = value.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("{name} output at flat index {pos}"),
            });
        }
        self.nodes.push(Node { value, needs_grad, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Differentiable input (model parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, true, Op::Leaf, "leaf")
    }

    /// Non-differentiable input (data).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, false, Op::Leaf, "constant")
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// `[m,k] . [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("inner dims differ: {:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let mut out = vec![T::ZERO; m * n];
        mm_nn(va.data(), vb.data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], out)?, needs, Op::MatMul { a, b }, "matmul")
    }

    /// `[m,k] . [n,k]^T -> [m,n]`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (n, k2) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_nt",
                detail: format!("inner dims differ: {:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let mut out = vec![T::ZERO; m * n];
        mm_nt(va.data(), vb.data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], out)?, needs, Op::MatMulNT { a, b }, "matmul_nt")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, Op::Add { a, b }, "add")
    }

    /// `[r,d] + [d]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let d = vx.cols();
        if vb.numel() != d {
            return Err(Error::Shape {
                op: "add_bias",
                detail: format!("bias len {} vs row width {d}", vb.numel()),
            });
        }
        let bdat = vb.data();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bdat[i % d])
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(bias);
        self.push(out, needs, Op::AddBias { x, bias }, "add_bias")
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| v * c).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(out, needs, Op::Scale { x, c }, "scale")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| v.maximum(T::ZERO)).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(out, needs, Op::Relu { x }, "relu")
    }

    /// Row-wise softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let d = vx.cols();
        if d == 0 || vx.numel() == 0 {
            return Err(Error::Shape { op: "softmax", detail: "empty axis".into() });
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(d) {
            let mut mx = T::neg_infinity();
            for &v in row.iter() {
                mx = mx.maximum(v);
            }
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(out, needs, Op::Softmax { x }, "softmax")
    }

    /// Row-wise layer normalization with affine output: per-row zero mean and
    /// unit variance before `gain`/`bias` are applied.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let d = vx.cols();
        if vg.numel() != d || vb.numel() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                detail: format!("gain/bias len {}/{} vs width {d}", vg.numel(), vb.numel()),
            });
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_d = T::ONE / T::from_f64(d as f64);
        let (g, b) = (vg.data(), vb.data());
        let mut row_stats = Vec::with_capacity(vx.rows());
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let inv_std = T::ONE / (var + eps).sqrt();
            row_stats.push((mean, inv_std));
            for (j, v) in row.iter_mut().enumerate() {
                *v = g[j] * ((*v - mean) * inv_std) + b[j];
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(out, needs, Op::LayerNorm { x, gain, bias, row_stats }, "layer_norm")
    }

    /// Select rows of `table` by index.
    pub fn gather(&mut self, table: NodeId, indices: Vec<u32>) -> Result<NodeId> {
        let vt = self.value(table);
        let (rows, d) = (vt.rows(), vt.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::Shape {
                op: "gather",
                detail: format!("index {bad} out of range for {rows} rows"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            data.extend_from_slice(&vt.data()[i as usize * d..(i as usize + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], data)?;
        let needs = self.needs(table);
        self.push(out, needs, Op::Gather { table, indices }, "gather")
    }

    /// Concatenate along the last axis; all parts must have equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape { op: "concat", detail: "no parts".into() });
        }
        let rows = self.value(parts[0]).rows();
        let mut width = 0usize;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("row counts differ: {} vs {}", v.rows(), rows),
                });
            }
            width += v.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let d = v.cols();
                data.extend_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
        }
        let out = Tensor::new(vec![rows, width], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, needs, Op::Concat { parts: parts.to_vec() }, "concat")
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. `p == 0` is a
    /// no-op that records nothing.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        if p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p));
        let vx = self.value(x);
        let mask: Vec<T> = (0..vx.numel())
            .map(|_| if rng.random::<f64>() < p { T::ZERO } else { keep_scale })
            .collect();
        let data = vx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(out, needs, Op::Dropout { x, mask }, "dropout")
    }

    /// Multi-head scaled dot-product attention with a causal mask and
    /// left-padding exclusion.
    ///
    /// `q`, `k`, `v` are `[batch*seq_len, d]` with `d` divisible by `heads`;
    /// `pads[s]` is the number of left-padding positions of sequence `s`.
    /// Query `t` attends to keys `j` with `j <= t` and `j >= pad`; a padding
    /// query attends only to itself so its softmax stays defined. Masked
    /// positions receive `-inf` logits and therefore exactly zero weight.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, pads: &[usize]) -> Result<NodeId> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols();
        if vk.shape() != vq.shape() || vv.shape() != vq.shape() {
            return Err(Error::Shape {
                op: "attention",
                detail: format!("q/k/v shapes differ: {:?} {:?} {:?}", vq.shape(), vk.shape(), vv.shape()),
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {d} not divisible by {heads} heads"
            )));
        }
        let batch = pads.len();
        let rows = vq.rows();
        if batch == 0 || rows % batch != 0 {
            return Err(Error::Shape {
                op: "attention",
                detail: format!("{rows} rows not divisible into {batch} sequences"),
            });
        }
        let n = rows / batch;
        if pads.iter().any(|&p| p > n) {
            return Err(Error::Shape {
                op: "attention",
                detail: "pad exceeds sequence length".into(),
            });
        }
        let mut out = vec![T::ZERO; rows * d];
        let mut probs = vec![T::ZERO; batch * heads * n * n];
        {
            let (qd, kd, vd) = (vq.data(), vk.data(), vv.data());
            let seq = |s: usize, o: &mut [T], pr: &mut [T]| {
                attn_forward_seq(
                    &qd[s * n * d..(s + 1) * n * d],
                    &kd[s * n * d..(s + 1) * n * d],
                    &vd[s * n * d..(s + 1) * n * d],
                    o,
                    pr,
                    n,
                    d,
                    heads,
                    pads[s],
                )
            };
            if batch > 1 && n * d >= 2048 {
                out.par_chunks_mut(n * d)
                    .zip(probs.par_chunks_mut(heads * n * n))
                    .enumerate()
                    .for_each(|(s, (o, pr))| seq(s, o, pr));
            } else {
                for (s, (o, pr)) in out
                    .chunks_mut(n * d)
                    .zip(probs.chunks_mut(heads * n * n))
                    .enumerate()
                {
                    seq(s, o, pr);
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        let op = Op::Attention(Box::new(AttentionOp {
            q,
            k,
            v,
            heads,
            seq_len: n,
            pads: pads.to_vec(),
            probs,
        }));
        self.push(Tensor::new(vec![rows, d], out)?, needs, op, "attention")
    }

    /// Row-wise dot product of two `[r,d]` tensors -> `[r]`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "row_dot",
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            });
        }
        let d = va.cols();
        let data: Vec<T> = va
            .data()
            .chunks(d)
            .zip(vb.data().chunks(d))
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
            .collect();
        let rows = data.len();
        let out = Tensor::new(vec![rows], data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, Op::RowDot { a, b }, "row_dot")
    }

    /// Scalar `sum(weights * x)`.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Vec<T>) -> Result<NodeId> {
        let vx = self.value(x);
        if weights.len() != vx.numel() {
            return Err(Error::Shape {
                op: "weighted_sum",
                detail: format!("{} weights for {} values", weights.len(), vx.numel()),
            });
        }
        let s: T = vx.data().iter().zip(&weights).map(|(&v, &w)| v * w).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), needs, Op::WeightedSum { x, weights }, "weighted_sum")
    }

    /// Weighted binary cross-entropy on raw scores:
    /// `sum_r weights[r] * log(1 + exp(-signs[r] * scores[r]))`.
    ///
    /// `signs[r] = +1` marks a positive, `-1` a negative; weights fold in any
    /// normalization, masking and loss-term scaling.
    pub fn logistic_loss(&mut self, scores: NodeId, signs: Vec<i8>, weights: Vec<T>) -> Result<NodeId> {
        let vs = self.value(scores);
        if signs.len() != vs.numel() || weights.len() != vs.numel() {
            return Err(Error::Shape {
                op: "logistic_loss",
                detail: format!(
                    "{} signs / {} weights for {} scores",
                    signs.len(),
                    weights.len(),
                    vs.numel()
                ),
            });
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Argument("logistic_loss signs must be +1 or -1".into()));
        }
        let mut loss = T::ZERO;
        for ((&s, &sg), &w) in vs.data().iter().zip(&signs).zip(&weights) {
            let z = if sg > 0 { -s } else { s };
            loss += w * softplus(z);
        }
        let needs = self.needs(scores);
        self.push(
            Tensor::scalar(loss),
            needs,
            Op::LogisticLoss { scores, signs, weights },
            "logistic_loss",
        )
    }

    /// Mean softmax cross-entropy over rows of `[b, c]` logits.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: Vec<u32>) -> Result<NodeId> {
        let vl = self.value(logits);
        let (b, c) = (vl.rows(), vl.cols());
        if targets.len() != b {
            return Err(Error::Shape {
                op: "softmax_xent",
                detail: format!("{} targets for {b} rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= c) {
            return Err(Error::Argument(format!(
                "target class {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vl.data().to_vec();
        let mut loss = T::ZERO;
        let inv_b = T::ONE / T::from_f64(b as f64);
        for (row, &t) in probs.chunks_mut(c).zip(&targets) {
            let mut mx = T::neg_infinity();
            for &v in row.iter() {
                mx = mx.maximum(v);
            }
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            loss += -(row[t as usize].ln()) * inv_b;
        }
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(loss),
            needs,
            Op::SoftmaxXent { logits, targets, probs },
            "softmax_xent",
        )
    }

    /// Accumulate gradients of a scalar node into every reachable input.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(T::ONE));

        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..nodes.len()).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            step_back(nodes, grads, i, &gout);
            grads[i] = Some(gout);
        }
        Ok(())
    }
}

fn add_grad<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    update: impl FnOnce(&mut Tensor<T>),
) {
    if !nodes[id.0].needs_grad {
        return;
    }
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(nodes[id.0].value.shape().to_vec()));
    }
    update(slot.as_mut().unwrap());
}

fn step_back<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], i: usize, gout: &Tensor<T>) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let va = &nodes[a.0].value;
            let vb = &nodes[b.0].value;
            let (m, k) = (va.rows(), va.cols());
            let n = vb.cols();
            add_grad(nodes, grads, *a, |g| mm_nt(gout.data(), vb.data(), m, n, k, g.data_mut()));
            add_grad(nodes, grads, *b, |g| mm_tn(va.data(), gout.data(), m, k, n, g.data_mut()));
        }
        Op::MatMulNT { a, b } => {
            let va = &nodes[a.0].value;
            let vb = &nodes[b.0].value;
            let (m, k) = (va.rows(), va.cols());
            let n = vb.rows();
            add_grad(nodes, grads, *a, |g| mm_nn(gout.data(), vb.data(), m, n, k, g.data_mut()));
            add_grad(nodes, grads, *b, |g| mm_tn(gout.data(), va.data(), m, n, k, g.data_mut()));
        }
        Op::Add { a, b } => {
            add_grad(nodes, grads, *a, |g| {
                g.data_mut().iter_mut().zip(gout.data()).for_each(|(x, &y)| *x += y)
            });
            add_grad(nodes, grads, *b, |g| {
                g.data_mut().iter_mut().zip(gout.data()).for_each(|(x, &y)| *x += y)
            });
        }
        Op::AddBias { x, bias } => {
            let d = nodes[bias.0].value.numel();
            add_grad(nodes, grads, *x, |g| {
                g.data_mut().iter_mut().zip(gout.data()).for_each(|(p, &q)| *p += q)
            });
            add_grad(nodes, grads, *bias, |g| {
                let gd = g.data_mut();
                for (i, &v) in gout.data().iter().enumerate() {
                    gd[i % d] += v;
                }
            });
        }
        Op::Scale { x, c } => {
            let c = *c;
            add_grad(nodes, grads, *x, |g| {
                g.data_mut().iter_mut().zip(gout.data()).for_each(|(p, &q)| *p += c * q)
            });
        }
        Op::Relu { x } => {
            let xv = nodes[x.0].value.data();
            add_grad(nodes, grads, *x, |g| {
                for ((p, &q), &xi) in g.data_mut().iter_mut().zip(gout.data()).zip(xv) {
                    if xi > T::ZERO {
                        *p += q;
                    }
                }
            });
        }
        Op::Softmax { x } => {
            let y = &nodes[i].value;
            let d = y.cols();
            add_grad(nodes, grads, *x, |g| {
                for ((grow, yrow), gorow) in g
                    .data_mut()
                    .chunks_mut(d)
                    .zip(y.data().chunks(d))
                    .zip(gout.data().chunks(d))
                {
                    let dot: T = gorow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((gi, &yi), &goi) in grow.iter_mut().zip(yrow).zip(gorow) {
                        *gi += yi * (goi - dot);
                    }
                }
            });
        }
        Op::LayerNorm { x, gain, bias, row_stats } => {
            let xv = nodes[x.0].value.data();
            let gv = nodes[gain.0].value.data();
            let d = nodes[gain.0].value.numel();
            let inv_d = T::ONE / T::from_f64(d as f64);

            add_grad(nodes, grads, *gain, |g| {
                let gd = g.data_mut();
                for (r, gorow) in gout.data().chunks(d).enumerate() {
                    let (mean, inv_std) = row_stats[r];
                    for (j, &go) in gorow.iter().enumerate() {
                        let xhat = (xv[r * d + j] - mean) * inv_std;
                        gd[j] += go * xhat;
                    }
                }
            });
            add_grad(nodes, grads, *bias, |g| {
                let gd = g.data_mut();
                for gorow in gout.data().chunks(d) {
                    for (gj, &go) in gd.iter_mut().zip(gorow) {
                        *gj += go;
                    }
                }
            });
            add_grad(nodes, grads, *x, |g| {
                for ((r, gorow), grow) in
                    gout.data().chunks(d).enumerate().zip(g.data_mut().chunks_mut(d))
                {
                    let (mean, inv_std) = row_stats[r];
                    let mut sum_gdy = T::ZERO;
                    let mut sum_gdy_xhat = T::ZERO;
                    for j in 0..d {
                        let gdy = gv[j] * gorow[j];
                        let xhat = (xv[r * d + j] - mean) * inv_std;
                        sum_gdy += gdy;
                        sum_gdy_xhat += gdy * xhat;
                    }
                    let m1 = sum_gdy * inv_d;
                    let m2 = sum_gdy_xhat * inv_d;
                    for j in 0..d {
                        let gdy = gv[j] * gorow[j];
                        let xhat = (xv[r * d + j] - mean) * inv_std;
                        grow[j] += (gdy - m1 - xhat * m2) * inv_std;
                    }
                }
            });
        }
        Op::Gather { table, indices } => {
            let d = nodes[table.0].value.cols();
            add_grad(nodes, grads, *table, |g| {
                let gd = g.data_mut();
                for (r, &ix) in indices.iter().enumerate() {
                    let dst = &mut gd[ix as usize * d..(ix as usize + 1) * d];
                    for (p, &q) in dst.iter_mut().zip(&gout.data()[r * d..(r + 1) * d]) {
                        *p += q;
                    }
                }
            });
        }
        Op::Concat { parts } => {
            let widths: Vec<usize> = parts.iter().map(|&p| nodes[p.0].value.cols()).collect();
            let total: usize = widths.iter().sum();
            let rows = nodes[i].value.rows();
            let mut offset = 0usize;
            for (&p, &w) in parts.iter().zip(&widths) {
                let off = offset;
                add_grad(nodes, grads, p, |g| {
                    let gd = g.data_mut();
                    for r in 0..rows {
                        let src = &gout.data()[r * total + off..r * total + off + w];
                        for (x, &y) in gd[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                });
                offset += w;
            }
        }
        Op::Dropout { x, mask } => {
            add_grad(nodes, grads, *x, |g| {
                for ((p, &q), &m) in g.data_mut().iter_mut().zip(gout.data()).zip(mask) {
                    *p += q * m;
                }
            });
        }
        Op::Attention(at) => {
            let (q, k, v) = (at.q, at.k, at.v);
            let (heads, n) = (at.heads, at.seq_len);
            let pads = &at.pads;
            let batch = pads.len();
            let d = nodes[q.0].value.cols();
            let qv = nodes[q.0].value.data();
            let kv = nodes[k.0].value.data();
            let vv = nodes[v.0].value.data();

            let mut dq = vec![T::ZERO; qv.len()];
            let mut dk = vec![T::ZERO; kv.len()];
            let mut dv = vec![T::ZERO; vv.len()];
            {
                let seq = |s: usize, dq_s: &mut [T], dk_s: &mut [T], dv_s: &mut [T]| {
                    attn_backward_seq(
                        &qv[s * n * d..(s + 1) * n * d],
                        &kv[s * n * d..(s + 1) * n * d],
                        &vv[s * n * d..(s + 1) * n * d],
                        &at.probs[s * heads * n * n..(s + 1) * heads * n * n],
                        &gout.data()[s * n * d..(s + 1) * n * d],
                        dq_s,
                        dk_s,
                        dv_s,
                        n,
                        d,
                        heads,
                        pads[s],
                    )
                };
                if batch > 1 && n * d >= 2048 {
                    dq.par_chunks_mut(n * d)
                        .zip(dk.par_chunks_mut(n * d))
                        .zip(dv.par_chunks_mut(n * d))
                        .enumerate()
                        .for_each(|(s, ((a, b), c))| seq(s, a, b, c));
                } else {
                    for s in 0..batch {
                        let (lo, hi) = (s * n * d, (s + 1) * n * d);
                        let (dq_s, dk_s, dv_s) =
                            (&mut dq[lo..hi], &mut dk[lo..hi], &mut dv[lo..hi]);
                        seq(s, dq_s, dk_s, dv_s);
                    }
                }
            }
            add_grad(nodes, grads, q, |g| {
                g.data_mut().iter_mut().zip(&dq).for_each(|(p, &x)| *p += x)
            });
            add_grad(nodes, grads, k, |g| {
                g.data_mut().iter_mut().zip(&dk).for_each(|(p, &x)| *p += x)
            });
            add_grad(nodes, grads, v, |g| {
                g.data_mut().iter_mut().zip(&dv).for_each(|(p, &x)| *p += x)
            });
        }
        Op::RowDot { a, b } => {
            let d = nodes[a.0].value.cols();
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            add_grad(nodes, grads, *a, |g| {
                let gd = g.data_mut();
                for (r, &go) in gout.data().iter().enumerate() {
                    for (p, &q) in gd[r * d..(r + 1) * d].iter_mut().zip(&bv[r * d..(r + 1) * d]) {
                        *p += go * q;
                    }
                }
            });
            add_grad(nodes, grads, *b, |g| {
                let gd = g.data_mut();
                for (r, &go) in gout.data().iter().enumerate() {
                    for (p, &q) in gd[r * d..(r + 1) * d].iter_mut().zip(&av[r * d..(r + 1) * d]) {
                        *p += go * q;
                    }
                }
            });
        }
        Op::WeightedSum { x, weights } => {
            let go = gout.data()[0];
            add_grad(nodes, grads, *x, |g| {
                g.data_mut().iter_mut().zip(weights).for_each(|(p, &wi)| *p += go * wi)
            });
        }
        Op::LogisticLoss { scores, signs, weights } => {
            let sv = nodes[scores.0].value.data();
            let go = gout.data()[0];
            add_grad(nodes, grads, *scores, |g| {
                for (((p, &s), &sg), &w) in g.data_mut().iter_mut().zip(sv).zip(signs).zip(weights) {
                    let sgn = if sg > 0 { T::ONE } else { -T::ONE };
                    *p += go * w * (-sgn) * sigmoid(-sgn * s);
                }
            });
        }
        Op::SoftmaxXent { logits, targets, probs } => {
            let c = nodes[logits.0].value.cols();
            let b = targets.len();
            let go = gout.data()[0];
            let inv_b = T::ONE / T::from_f64(b as f64);
            add_grad(nodes, grads, *logits, |g| {
                let gd = g.data_mut();
                for (r, &t) in targets.iter().enumerate() {
                    let grow = &mut gd[r * c..(r + 1) * c];
                    let prow = &probs[r * c..(r + 1) * c];
                    for (j, (gj, &pj)) in grow.iter_mut().zip(prow).enumerate() {
                        let delta = if j == t as usize { T::ONE } else { T::ZERO };
                        *gj += go * inv_b * (pj - delta);
                    }
                }
            });
        }
    }
}

/// Allowed key range for query `t` with `pad` left-padding positions:
/// contiguous `[lo, t]`.
#[inline]
fn attn_lo(t: usize, pad: usize) -> usize {
    if t >= pad {
        pad
    } else {
        t
    }
}

#[allow(clippy::too_many_arguments)]
fn attn_forward_seq<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    out: &mut [T],
    probs: &mut [T],
    n: usize,
    d: usize,
    heads: usize,
    pad: usize,
) {
    let hd = d / heads;
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    for h in 0..heads {
        let c0 = h * hd;
        let pbase = h * n * n;
        for t in 0..n {
            let lo = attn_lo(t, pad);
            let qrow = &q[t * d + c0..t * d + c0 + hd];
            let prow = &mut probs[pbase + t * n..pbase + (t + 1) * n];
            let mut mx = T::neg_infinity();
            for j in lo..=t {
                let krow = &k[j * d + c0..j * d + c0 + hd];
                let mut s = T::ZERO;
                for (&a, &b) in qrow.iter().zip(krow) {
                    s += a * b;
                }
                let s = s * scale;
                prow[j] = s;
                mx = mx.maximum(s);
            }
            let mut sum = T::ZERO;
            for j in lo..=t {
                prow[j] = (prow[j] - mx).exp();
                sum += prow[j];
            }
            let orow = &mut out[t * d + c0..t * d + c0 + hd];
            for j in lo..=t {
                prow[j] /= sum;
                let w = prow[j];
                let vrow = &v[j * d + c0..j * d + c0 + hd];
                for (o, &vi) in orow.iter_mut().zip(vrow) {
                    *o += w * vi;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attn_backward_seq<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    gout: &[T],
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
    n: usize,
    d: usize,
    heads: usize,
    pad: usize,
) {
    let hd = d / heads;
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut dp = vec![T::ZERO; n];
    for h in 0..heads {
        let c0 = h * hd;
        let pbase = h * n * n;
        for t in 0..n {
            let lo = attn_lo(t, pad);
            let prow = &probs[pbase + t * n..pbase + (t + 1) * n];
            let gorow = &gout[t * d + c0..t * d + c0 + hd];

            // dP = dOut . V^T and dV += P^T dOut, restricted to the mask.
            let mut dot = T::ZERO;
            for j in lo..=t {
                let vrow = &v[j * d + c0..j * d + c0 + hd];
                let mut s = T::ZERO;
                for (&a, &b) in gorow.iter().zip(vrow) {
                    s += a * b;
                }
                dp[j] = s;
                dot += s * prow[j];
                let w = prow[j];
                let dvrow = &mut dv[j * d + c0..j * d + c0 + hd];
                for (o, &g) in dvrow.iter_mut().zip(gorow) {
                    *o += w * g;
                }
            }
            // Softmax backward, then chain into Q and K.
            let qrow = &q[t * d + c0..t * d + c0 + hd];
            for j in lo..=t {
                let ds = prow[j] * (dp[j] - dot) * scale;
                let krow = &k[j * d + c0..j * d + c0 + hd];
                let dqrow = &mut dq[t * d + c0..t * d + c0 + hd];
                for (o, &ki) in dqrow.iter_mut().zip(krow) {
                    *o += ds * ki;
                }
                let dkrow = &mut dk[j * d + c0..j * d + c0 + hd];
                for (o, &qi) in dkrow.iter_mut().zip(qrow) {
                    *o += ds * qi;
                }
            }
        }
    }
}
