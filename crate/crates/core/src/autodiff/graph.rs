//! Tape of tensor operations with reverse-mode accumulation.
//!
//! Every operation appends a node whose inputs have strictly smaller indices,
//! so walking the tape backwards is a valid topological order. Gradients are
//! accumulated additively into leaf buffers; interior buffers are released as
//! soon as they have been propagated.

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_CUBIC: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    /// Keeps the inner tanh for the backward pass.
    Gelu(Var, Vec<f64>),
    Log(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SquaredError {
        pred: Var,
        target: Vec<f64>,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(dim_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            av.data(),
            (k as isize, 1),
            bv.data(),
            (n as isize, 1),
            &mut out,
            (n as isize, 1),
            0.0,
        );
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err(op, av, bv));
        }
        Ok(av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip(a, b, "add", |x, y| x + y)?;
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip(a, b, "sub", |x, y| x - y)?;
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip(a, b, "mul", |x, y| x * y)?;
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a `[1, cols]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(dim_err("add_row", av, rv));
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Scale(a, factor), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let th: Vec<f64> = av
            .data()
            .iter()
            .map(|&x| (GELU_SCALE * (x + GELU_CUBIC * x * x * x)).tanh())
            .collect();
        let data = av.data().iter().zip(&th).map(|(&x, t)| 0.5 * x * (1.0 + t)).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Gelu(a, th), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.ln()).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Log(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Row-wise layer normalization with gain and offset rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.cols();
        if gv.len() != c {
            return Err(dim_err("layer_norm", xv, gv));
        }
        if bv.len() != c {
            return Err(dim_err("layer_norm", xv, bv));
        }
        let rows = xv.rows();
        let mut normalized = vec![0.0; rows * c];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                normalized[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head causal self-attention over a packed `[batch * seq, 3 * dim]`
    /// query/key/value matrix. Position `i` attends to positions `0..=i` of its
    /// own sequence only. Returns `[batch * seq, dim]` with heads concatenated.
    pub fn causal_attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let qv = self.value(qkv);
        let width = qv.cols();
        if qv.rows() != batch * seq || !width.is_multiple_of(3) || heads == 0 || !(width / 3).is_multiple_of(heads) {
            return Err(Error::Dimension {
                op: "causal_attention",
                lhs: qv.shape().to_vec(),
                rhs: vec![batch, seq, heads],
            });
        }
        let dim = width / 3;
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let src = qv.data();
        let mut out = vec![0.0; batch * seq * dim];
        let mut probs = vec![0.0; batch * heads * seq * seq];
        for b in 0..batch {
            let base = b * seq * width;
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
                gemm(
                    seq,
                    hd,
                    seq,
                    &src[base + h * hd..],
                    (width as isize, 1),
                    &src[base + dim + h * hd..],
                    (1, width as isize),
                    p,
                    (seq as isize, 1),
                    0.0,
                );
                for i in 0..seq {
                    let row = &mut p[i * seq..(i + 1) * seq];
                    for v in row[..=i].iter_mut() {
                        *v *= scale;
                    }
                    softmax_in_place(&mut row[..=i]);
                    for v in row[i + 1..].iter_mut() {
                        *v = 0.0;
                    }
                }
                gemm(
                    seq,
                    seq,
                    hd,
                    p,
                    (seq as isize, 1),
                    &src[base + 2 * dim + h * hd..],
                    (width as isize, 1),
                    &mut out[b * seq * dim + h * hd..],
                    (dim as isize, 1),
                    0.0,
                );
            }
        }
        let t = Tensor::matrix(batch * seq, dim, out)?;
        let rg = self.needs(qkv);
        Ok(self.push(
            t,
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (n, c) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::matrix(indices.len(), c, out)?;
        let rg = self.needs(table);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Sum over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, c) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::Index { index: t, len: c });
            }
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            softmax_in_place(&mut probs[r * c..(r + 1) * c]);
        }
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Sum of squared differences against a constant target.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.cols() != target.cols() {
            return Err(dim_err("squared_error", pv, target));
        }
        let total = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(total),
            Op::SquaredError {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Reverse sweep from a one-element `loss`, accumulating into every leaf
    /// that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: lv.shape().to_vec(),
                rhs: vec![1],
            });
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", lv.item())));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.nodes, loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.take() else { continue };
            if matches!(node.op, Op::Leaf) {
                node.grad = Some(g);
                continue;
            }
            propagate(before, &node.op, &node.value, &g);
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn grad_buf(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f64>> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(node.grad.get_or_insert_with(|| vec![0.0; len]))
}

fn accumulate(nodes: &mut [Node], v: Var, g: &[f64]) {
    if let Some(buf) = grad_buf(nodes, v) {
        for (b, x) in buf.iter_mut().zip(g) {
            *b += x;
        }
    }
}

fn accumulate_with(nodes: &mut [Node], v: Var, f: impl Fn(usize) -> f64) {
    if let Some(buf) = grad_buf(nodes, v) {
        for (i, b) in buf.iter_mut().enumerate() {
            *b += f(i);
        }
    }
}

fn propagate(nodes: &mut [Node], op: &Op, out: &Tensor, g: &[f64]) {
    match *op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let n = nodes[b.0].value.cols();
            if nodes[a.0].requires_grad {
                let bdata = nodes[b.0].value.data().to_vec();
                let buf = grad_buf(nodes, a).expect("requires grad");
                gemm(m, n, k, g, (n as isize, 1), &bdata, (1, n as isize), buf, (k as isize, 1), 1.0);
            }
            if nodes[b.0].requires_grad {
                let adata = nodes[a.0].value.data().to_vec();
                let buf = grad_buf(nodes, b).expect("requires grad");
                gemm(k, m, n, &adata, (1, k as isize), g, (n as isize, 1), buf, (n as isize, 1), 1.0);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, a, g);
            accumulate(nodes, b, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, a, g);
            accumulate_with(nodes, b, |i| -g[i]);
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            accumulate_with(nodes, a, |i| g[i] * bv[i]);
            accumulate_with(nodes, b, |i| g[i] * av[i]);
        }
        Op::AddRow(a, row) => {
            accumulate(nodes, a, g);
            let c = nodes[row.0].value.cols();
            if let Some(buf) = grad_buf(nodes, row) {
                for chunk in g.chunks(c) {
                    for (b, x) in buf.iter_mut().zip(chunk) {
                        *b += x;
                    }
                }
            }
        }
        Op::Scale(a, f) => accumulate_with(nodes, a, |i| g[i] * f),
        Op::Gelu(a, ref tanh) => {
            let av = nodes[a.0].value.data().to_vec();
            accumulate_with(nodes, a, |i| {
                let x = av[i];
                let th = tanh[i];
                let d = 0.5 * (1.0 + th)
                    + 0.5 * x * (1.0 - th * th) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x);
                g[i] * d
            });
        }
        Op::Log(a) => {
            let av = nodes[a.0].value.data().to_vec();
            accumulate_with(nodes, a, |i| g[i] / av[i]);
        }
        Op::Softmax(a) => {
            let c = out.cols();
            let y = out.data();
            if let Some(buf) = grad_buf(nodes, a) {
                for r in 0..out.rows() {
                    let ys = &y[r * c..(r + 1) * c];
                    let gs = &g[r * c..(r + 1) * c];
                    let dot: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        buf[r * c + j] += ys[j] * (gs[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            ref normalized,
            ref rstd,
        } => {
            let c = out.cols();
            let rows = out.rows();
            let gv = nodes[gain.0].value.data().to_vec();
            if let Some(buf) = grad_buf(nodes, x) {
                for r in 0..rows {
                    let gs = &g[r * c..(r + 1) * c];
                    let hs = &normalized[r * c..(r + 1) * c];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..c {
                        let d = gs[j] * gv[j];
                        mean_d += d;
                        mean_dh += d * hs[j];
                    }
                    mean_d /= c as f64;
                    mean_dh /= c as f64;
                    for j in 0..c {
                        let d = gs[j] * gv[j];
                        buf[r * c + j] += rstd[r] * (d - mean_d - hs[j] * mean_dh);
                    }
                }
            }
            if let Some(buf) = grad_buf(nodes, gain) {
                for r in 0..rows {
                    for j in 0..c {
                        buf[j] += g[r * c + j] * normalized[r * c + j];
                    }
                }
            }
            if let Some(buf) = grad_buf(nodes, bias) {
                for chunk in g.chunks(c) {
                    for (b, v) in buf.iter_mut().zip(chunk) {
                        *b += v;
                    }
                }
            }
        }
        Op::Attention {
            qkv,
            batch,
            seq,
            heads,
            ref probs,
        } => {
            if !nodes[qkv.0].requires_grad {
                return;
            }
            let src = nodes[qkv.0].value.data().to_vec();
            let width = nodes[qkv.0].value.cols();
            let dim = width / 3;
            let hd = dim / heads;
            let scale = 1.0 / (hd as f64).sqrt();
            let buf = grad_buf(nodes, qkv).expect("requires grad");
            let mut dp = vec![0.0; seq * seq];
            for b in 0..batch {
                let base = b * seq * width;
                let gbase = b * seq * dim;
                for h in 0..heads {
                    let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
                    let go = &g[gbase + h * hd..];
                    // dP = dO V^T
                    gemm(
                        seq,
                        hd,
                        seq,
                        go,
                        (dim as isize, 1),
                        &src[base + 2 * dim + h * hd..],
                        (1, width as isize),
                        &mut dp,
                        (seq as isize, 1),
                        0.0,
                    );
                    // dV += P^T dO
                    gemm(
                        seq,
                        seq,
                        hd,
                        p,
                        (1, seq as isize),
                        go,
                        (dim as isize, 1),
                        &mut buf[base + 2 * dim + h * hd..],
                        (width as isize, 1),
                        1.0,
                    );
                    // dS = P * (dP - rowsum(P * dP)), scaled
                    for i in 0..seq {
                        let pr = &p[i * seq..(i + 1) * seq];
                        let dr = &mut dp[i * seq..(i + 1) * seq];
                        let dot: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                        for j in 0..seq {
                            dr[j] = if j <= i { pr[j] * (dr[j] - dot) * scale } else { 0.0 };
                        }
                    }
                    // dQ += dS K
                    gemm(
                        seq,
                        seq,
                        hd,
                        &dp,
                        (seq as isize, 1),
                        &src[base + dim + h * hd..],
                        (width as isize, 1),
                        &mut buf[base + h * hd..],
                        (width as isize, 1),
                        1.0,
                    );
                    // dK += dS^T Q
                    gemm(
                        seq,
                        seq,
                        hd,
                        &dp,
                        (1, seq as isize),
                        &src[base + h * hd..],
                        (width as isize, 1),
                        &mut buf[base + dim + h * hd..],
                        (width as isize, 1),
                        1.0,
                    );
                }
            }
        }
        Op::Gather { table, ref indices } => {
            let c = out.cols();
            if let Some(buf) = grad_buf(nodes, table) {
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        buf[i * c + j] += g[r * c + j];
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            ref targets,
            ref probs,
        } => {
            let c = nodes[logits.0].value.cols();
            let scale = g[0];
            if let Some(buf) = grad_buf(nodes, logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        buf[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
        Op::SquaredError { pred, ref target } => {
            let pv = nodes[pred.0].value.data().to_vec();
            let scale = g[0];
            accumulate_with(nodes, pred, |i| 2.0 * scale * (pv[i] - target[i]));
        }
        Op::Sum(a) => {
            let scale = g[0];
            accumulate_with(nodes, a, |_| scale);
        }
    }
}
