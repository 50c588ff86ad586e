//! Tape-based reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! tape visits each node after all of its consumers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::mask::AttentionMask;
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{dot, matmul_acc, matmul_t_acc, matmul_tn_acc, Tensor};
use crate::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Attention { q: Var, k: Var, v: Var, mask: AttentionMask, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64>, denom: f64 },
    Bce { logits: Var, targets: Vec<f64>, weights: Vec<f64>, denom: f64 },
    SquaredError { pred: Var, target: Vec<f64>, denom: f64 },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter to the tape; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.variable(store.get(id).clone());
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`, used for tied output projections.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_t inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_t_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shape mismatch");
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let (m, n) = self.dims(a);
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Add(a, b), ng)
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(self.dims(row), (1, n), "add_row expects a 1x{n} row");
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shape mismatch");
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let (m, n) = self.dims(a);
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * s).collect();
        let (m, n) = self.dims(a);
        let ng = self.needs(a);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Scale(a, s), ng)
    }

    /// Inverted dropout; the identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> =
            (0..self.value(a).len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let out: Vec<f64> = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let (m, n) = self.dims(a);
        let ng = self.needs(a);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::MulConst(a, mask), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let (m, n) = self.dims(a);
        let ng = self.needs(a);
        self.push(Tensor::matrix(m, n, out).unwrap(), op, ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, libm::tanh, Op::Tanh(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let ng = self.needs(a);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Softmax(a), ng)
    }

    /// Row-wise layer normalisation followed by the affine `gamma`, `beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.dims(x);
        assert_eq!(self.dims(gamma), (1, n));
        assert_eq!(self.dims(beta), (1, n));
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let (rows, n) = self.dims(table);
        let t = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            assert!(i < rows, "gather index {i} out of range {rows}");
            out.extend_from_slice(t.row(i));
        }
        let ng = self.needs(table);
        self.push(Tensor::matrix(indices.len(), n, out).unwrap(), Op::Gather(table, indices.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            assert_eq!(pn, n, "concat_rows column mismatch");
            m += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(start + len <= m, "slice_rows out of range");
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let ng = self.needs(a);
        self.push(Tensor::matrix(len, n, out).unwrap(), Op::SliceRows(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        assert!(parts.iter().all(|&p| self.dims(p).0 == m), "concat_cols row mismatch");
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(start + len <= n, "slice_cols out of range");
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let ng = self.needs(a);
        self.push(Tensor::matrix(m, len, out).unwrap(), Op::SliceCols(a, start), ng)
    }

    /// Scaled dot-product attention over already-projected `q`, `k`, `v`
    /// (each L×H), split into `heads` contiguous column groups.
    ///
    /// Keys disallowed by `mask` get exactly zero weight and are skipped in
    /// every sum, so their values cannot influence the output. A query row
    /// with no allowed key produces a zero output row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &AttentionMask, heads: usize) -> Result<Var> {
        let (l, h) = self.dims(q);
        if heads == 0 || h % heads != 0 {
            return Err(Error::HeadsNotDivisible { hidden: h, heads });
        }
        if self.dims(k) != (l, h) || self.dims(v) != (l, h) || mask.len() != l {
            return Err(Error::ShapeMismatch(format!(
                "attention q {:?}, k {:?}, v {:?}, mask {}",
                self.dims(q),
                self.dims(k),
                self.dims(v),
                mask.len()
            )));
        }
        let dh = h / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * l * l];
        let mut out = vec![0.0; l * h];
        let mut scores = vec![0.0; l];
        for head in 0..heads {
            let off = head * dh;
            for i in 0..l {
                let allowed = mask.row(i);
                let qi = &qd[i * h + off..i * h + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..l {
                    if allowed[j] {
                        let s = dot(qi, &kd[j * h + off..j * h + off + dh]) * scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let p = &mut probs[(head * l + i) * l..(head * l + i + 1) * l];
                let mut z = 0.0;
                for j in 0..l {
                    if allowed[j] {
                        let e = libm::exp(scores[j] - max);
                        p[j] = e;
                        z += e;
                    }
                }
                let orow = &mut out[i * h + off..i * h + off + dh];
                for j in 0..l {
                    if allowed[j] {
                        p[j] /= z;
                        let vj = &vd[j * h + off..j * h + off + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p[j] * x;
                        }
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            Tensor::matrix(l, h, out).unwrap(),
            Op::Attention { q, k, v, mask: mask.clone(), heads, probs },
            ng,
        ))
    }

    /// Softmax cross-entropy summed over rows and divided by `denom`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], denom: f64) -> Var {
        let (m, n) = self.dims(logits);
        assert_eq!(targets.len(), m, "one target per row");
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(n).enumerate() {
            assert!(targets[r] < n, "target {} out of range {n}", targets[r]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
            loss += lse - row[targets[r]];
            softmax_in_place(row);
        }
        let ng = self.needs(logits);
        self.push(
            Tensor::scalar(loss / denom),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, denom },
            ng,
        )
    }

    /// Weighted binary cross-entropy on logits: `Σ w·bce(z, y) / denom`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], weights: &[f64], denom: f64) -> Var {
        let len = self.value(logits).len();
        assert_eq!(targets.len(), len);
        assert_eq!(weights.len(), len);
        let loss: f64 = self
            .value(logits)
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &y), &w)| w * bce_logit(z, y))
            .sum();
        let ng = self.needs(logits);
        self.push(
            Tensor::scalar(loss / denom),
            Op::Bce { logits, targets: targets.to_vec(), weights: weights.to_vec(), denom },
            ng,
        )
    }

    /// Squared L2 distance summed over all entries, divided by `denom`.
    pub fn squared_error(&mut self, pred: Var, target: &[f64], denom: f64) -> Var {
        assert_eq!(self.value(pred).len(), target.len());
        let loss: f64 = self.value(pred).data().iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
        let ng = self.needs(pred);
        self.push(Tensor::scalar(loss / denom), Op::SquaredError { pred, target: target.to_vec(), denom }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let (rows, cols) = self.dims(loss);
        if rows * cols != 1 {
            return Err(Error::NotScalar { rows, cols });
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            } else if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        if !self.needs(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = node.grad.take() else { continue };
            backprop(before, node, &g);
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every parameter of `store` that was
    /// bound to this graph. Parameters outside the graph are reported as
    /// missing (zero gradient).
    pub fn param_grads(&mut self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        self.backward(loss)?;
        let mut grads = vec![None; store.len()];
        for (i, slot) in self.param_vars.iter().enumerate() {
            let Some(v) = slot else { continue };
            let node = &self.nodes[v.0];
            let g = node.grad.clone().unwrap_or_else(|| vec![0.0; node.value.len()]);
            grads[i] = Some(Tensor::matrix(node.value.rows(), node.value.cols(), g).unwrap());
        }
        Ok(Gradients::from_vec(grads))
    }
}

fn accumulate(nodes: &mut [Node], v: Var, contrib: &[f64]) {
    let node = &mut nodes[v.0];
    if !node.needs_grad {
        return;
    }
    match node.grad.as_mut() {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        None => node.grad = Some(contrib.to_vec()),
    }
}

fn backprop(nodes: &mut [Node], node: &Node, g: &[f64]) {
    let val = |nodes: &[Node], v: Var| -> (usize, usize) { (nodes[v.0].value.rows(), nodes[v.0].value.cols()) };
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(nodes, *a);
            let n = nodes[b.0].value.cols();
            if nodes[a.0].needs_grad {
                let mut da = vec![0.0; m * k];
                matmul_t_acc(g, nodes[b.0].value.data(), &mut da, m, n, k);
                accumulate(nodes, *a, &da);
            }
            if nodes[b.0].needs_grad {
                let mut db = vec![0.0; k * n];
                matmul_tn_acc(nodes[a.0].value.data(), g, &mut db, m, k, n);
                accumulate(nodes, *b, &db);
            }
        }
        Op::MatMulT(a, b) => {
            // c = a bᵀ, a: m×k, b: n×k
            let (m, k) = val(nodes, *a);
            let n = nodes[b.0].value.rows();
            if nodes[a.0].needs_grad {
                let mut da = vec![0.0; m * k];
                matmul_acc(g, nodes[b.0].value.data(), &mut da, m, n, k);
                accumulate(nodes, *a, &da);
            }
            if nodes[b.0].needs_grad {
                let mut db = vec![0.0; n * k];
                matmul_tn_acc(g, nodes[a.0].value.data(), &mut db, m, n, k);
                accumulate(nodes, *b, &db);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, *a, g);
            accumulate(nodes, *b, g);
        }
        Op::AddRow(a, row) => {
            accumulate(nodes, *a, g);
            let n = nodes[row.0].value.cols();
            let mut dr = vec![0.0; n];
            for chunk in g.chunks(n) {
                for (d, x) in dr.iter_mut().zip(chunk) {
                    *d += x;
                }
            }
            accumulate(nodes, *row, &dr);
        }
        Op::Mul(a, b) => {
            let da: Vec<f64> = g.iter().zip(nodes[b.0].value.data()).map(|(x, y)| x * y).collect();
            let db: Vec<f64> = g.iter().zip(nodes[a.0].value.data()).map(|(x, y)| x * y).collect();
            accumulate(nodes, *a, &da);
            accumulate(nodes, *b, &db);
        }
        Op::MulConst(a, mask) => {
            let da: Vec<f64> = g.iter().zip(mask).map(|(x, y)| x * y).collect();
            accumulate(nodes, *a, &da);
        }
        Op::Scale(a, s) => {
            let da: Vec<f64> = g.iter().map(|x| x * s).collect();
            accumulate(nodes, *a, &da);
        }
        Op::Gelu(a) => {
            let da: Vec<f64> = g.iter().zip(nodes[a.0].value.data()).map(|(d, &x)| d * gelu_grad(x)).collect();
            accumulate(nodes, *a, &da);
        }
        Op::Sigmoid(a) => {
            let da: Vec<f64> = g.iter().zip(node.value.data()).map(|(d, &y)| d * y * (1.0 - y)).collect();
            accumulate(nodes, *a, &da);
        }
        Op::Tanh(a) => {
            let da: Vec<f64> = g.iter().zip(node.value.data()).map(|(d, &y)| d * (1.0 - y * y)).collect();
            accumulate(nodes, *a, &da);
        }
        Op::Softmax(a) => {
            let n = node.value.cols();
            let mut da = vec![0.0; g.len()];
            for ((drow, grow), yrow) in da.chunks_mut(n).zip(g.chunks(n)).zip(node.value.data().chunks(n)) {
                let s: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                for ((d, gx), y) in drow.iter_mut().zip(grow).zip(yrow) {
                    *d = y * (gx - s);
                }
            }
            accumulate(nodes, *a, &da);
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let n = node.value.cols();
            let gam = nodes[gamma.0].value.data().to_vec();
            let mut dg = vec![0.0; n];
            let mut db = vec![0.0; n];
            let mut dx = vec![0.0; g.len()];
            for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for c in 0..n {
                    dg[c] += grow[c] * hrow[c];
                    db[c] += grow[c];
                    let dh = grow[c] * gam[c];
                    sum_dh += dh;
                    sum_dh_h += dh * hrow[c];
                }
                let is = inv_std[r];
                let nf = n as f64;
                for c in 0..n {
                    let dh = grow[c] * gam[c];
                    dx[r * n + c] = is / nf * (nf * dh - sum_dh - hrow[c] * sum_dh_h);
                }
            }
            accumulate(nodes, *x, &dx);
            accumulate(nodes, *gamma, &dg);
            accumulate(nodes, *beta, &db);
        }
        Op::Gather(table, idx) => {
            if nodes[table.0].needs_grad {
                let (rows, n) = val(nodes, *table);
                let mut dt = vec![0.0; rows * n];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..n {
                        dt[i * n + c] += g[r * n + c];
                    }
                }
                accumulate(nodes, *table, &dt);
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                accumulate(nodes, *p, &g[off..off + len]);
                off += len;
            }
        }
        Op::SliceRows(a, start) => {
            let (m, n) = val(nodes, *a);
            if nodes[a.0].needs_grad {
                let mut da = vec![0.0; m * n];
                da[start * n..start * n + g.len()].copy_from_slice(g);
                accumulate(nodes, *a, &da);
            }
        }
        Op::ConcatCols(parts) => {
            let m = node.value.rows();
            let n = node.value.cols();
            let mut off = 0;
            for p in parts {
                let w = nodes[p.0].value.cols();
                if nodes[p.0].needs_grad {
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&g[r * n + off..r * n + off + w]);
                    }
                    accumulate(nodes, *p, &dp);
                }
                off += w;
            }
        }
        Op::SliceCols(a, start) => {
            let (m, n) = val(nodes, *a);
            let w = node.value.cols();
            if nodes[a.0].needs_grad {
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    da[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                accumulate(nodes, *a, &da);
            }
        }
        Op::Attention { q, k, v, mask, heads, probs } => {
            let (l, h) = val(nodes, *q);
            let dh = h / heads;
            let scale = 1.0 / libm::sqrt(dh as f64);
            let mut dq = vec![0.0; l * h];
            let mut dk = vec![0.0; l * h];
            let mut dv = vec![0.0; l * h];
            {
                let qd = nodes[q.0].value.data();
                let kd = nodes[k.0].value.data();
                let vd = nodes[v.0].value.data();
                let mut dp = vec![0.0; l];
                for head in 0..*heads {
                    let off = head * dh;
                    for i in 0..l {
                        let allowed = mask.row(i);
                        let p = &probs[(head * l + i) * l..(head * l + i + 1) * l];
                        let gi = &g[i * h + off..i * h + off + dh];
                        let mut s = 0.0;
                        for j in 0..l {
                            if allowed[j] && p[j] != 0.0 {
                                let vj = &vd[j * h + off..j * h + off + dh];
                                dp[j] = dot(gi, vj);
                                s += p[j] * dp[j];
                                let dvj = &mut dv[j * h + off..j * h + off + dh];
                                for (d, x) in dvj.iter_mut().zip(gi) {
                                    *d += p[j] * x;
                                }
                            }
                        }
                        for j in 0..l {
                            if allowed[j] && p[j] != 0.0 {
                                let ds = p[j] * (dp[j] - s) * scale;
                                for c in 0..dh {
                                    dq[i * h + off + c] += ds * kd[j * h + off + c];
                                    dk[j * h + off + c] += ds * qd[i * h + off + c];
                                }
                            }
                        }
                    }
                }
            }
            accumulate(nodes, *q, &dq);
            accumulate(nodes, *k, &dk);
            accumulate(nodes, *v, &dv);
        }
        Op::CrossEntropy { logits, targets, probs, denom } => {
            let n = nodes[logits.0].value.cols();
            let scale = g[0] / denom;
            let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &t) in targets.iter().enumerate() {
                d[r * n + t] -= scale;
            }
            accumulate(nodes, *logits, &d);
        }
        Op::Bce { logits, targets, weights, denom } => {
            let scale = g[0] / denom;
            let d: Vec<f64> = nodes[logits.0]
                .value
                .data()
                .iter()
                .zip(targets)
                .zip(weights)
                .map(|((&z, &y), &w)| w * (sigmoid(z) - y) * scale)
                .collect();
            accumulate(nodes, *logits, &d);
        }
        Op::SquaredError { pred, target, denom } => {
            let scale = 2.0 * g[0] / denom;
            let d: Vec<f64> =
                nodes[pred.0].value.data().iter().zip(target).map(|(p, t)| (p - t) * scale).collect();
            accumulate(nodes, *pred, &d);
        }
        Op::Sum(a) => {
            let len = nodes[a.0].value.len();
            accumulate(nodes, *a, &vec![g[0]; len]);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

/// Numerically stable `-(y ln σ(z) + (1-y) ln(1-σ(z)))`.
pub fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}
