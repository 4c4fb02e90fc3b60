//! Reverse-mode differentiation over a linear record of matrix operations.
//!
//! A [`Tape`] is filled during the forward pass; every method computes its
//! result eagerly and appends a node. [`Tape::gradients`] replays the record
//! backwards from a scalar loss.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::params::{Gradients, ParamSet};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, transpose_b: bool },
    AddRow { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    RepeatRows(Var),
    Transpose(Var),
    Sum(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
}

/// Recording of one forward computation.
///
/// Parameters are borrowed from their [`ParamSet`], never copied.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    bound: HashMap<String, Var>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A value that receives no gradient of interest (data, masks).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Binds a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, params: &'p ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = params.get(name)?;
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.dims(a), self.dims(b));
        if sa != sb {
            return Err(Error::dim(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(())
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            m,
            k,
            false,
            self.value(b).data(),
            k,
            n,
            false,
            &mut out,
            false,
        );
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul {
                a,
                b,
                transpose_b: false,
            },
        ))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::dim("matmul_t", &[m, k], &[n, k2]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            m,
            k,
            false,
            self.value(b).data(),
            n,
            k,
            true,
            &mut out,
            false,
        );
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul {
                a,
                b,
                transpose_b: true,
            },
        ))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let b = self.value(bias);
        if b.len() != n {
            return Err(Error::dim("add_row", &[m, n], b.shape()));
        }
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRow { x, bias }))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (m, n) = self.dims(a);
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::matrix(m, n, out)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale · x + shift`, element-wise.
    pub fn affine_scalar(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { x, scale })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()));
        self.push(out, Op::Gelu(x))
    }

    /// Numerically stabilised softmax applied to each row independently.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let n = out.cols();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Row-wise layer normalisation with learned gain and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims(x);
        for p in [gamma, beta] {
            if self.value(p).len() != n {
                return Err(Error::dim("layer_norm", &[m, n], self.value(p).shape()));
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, n) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::Contract("gather with no indices".into()));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= rows {
                return Err(Error::dim("gather", &[rows, n], &[id]));
            }
            out.extend_from_slice(t.row(id));
        }
        Ok(self.push(
            Tensor::matrix(ids.len(), n, out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        for &p in parts {
            if self.dims(p).0 != m {
                let d = self.dims(p);
                return Err(Error::dim("concat_cols", &[m], &[d.0, d.1]));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            Tensor::matrix(m, total, out)?,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).1;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(Error::dim("concat_rows", &[n], &[r, c]));
            }
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n;
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", &[m, n], &[start, len]));
        }
        let t = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, out)?, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", &[m, n], &[start, len]));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::matrix(len, n, out)?, Op::SliceRows { x, start }))
    }

    /// Stacks `count` copies of a single-row value.
    pub fn repeat_rows(&mut self, x: Var, count: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if m != 1 || count == 0 {
            return Err(Error::dim("repeat_rows", &[m, n], &[count]));
        }
        let row = self.value(x).data().to_vec();
        let out: Vec<f64> = std::iter::repeat_n(row, count).flatten().collect();
        Ok(self.push(Tensor::matrix(count, n, out)?, Op::RepeatRows(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = transpose(self.value(x));
        self.push(out, Op::Transpose(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if m != 1 || target >= n {
            return Err(Error::dim("cross_entropy", &[m, n], &[target]));
        }
        let mut probs = self.value(logits).data().to_vec();
        let row = self.value(logits).data();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - row[target];
        softmax_in_place(&mut probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Runs the backward pass from `loss` and collects one gradient per
    /// entry of `params`; parameters never bound on this tape get zeros.
    pub fn gradients(&self, loss: Var, params: &ParamSet) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, p) in params.iter() {
            let g = self
                .bound
                .get(name)
                .and_then(|v| grads[v.0].clone())
                .unwrap_or_else(|| Tensor::zeros(p.shape()));
            out.insert(name.to_string(), g.reshape(p.shape().to_vec())?);
        }
        Ok(Gradients::from_map(out))
    }

    /// Adds the gradient of `loss` into `into` for every parameter bound on
    /// this tape; others are left untouched.
    pub fn accumulate_gradients(&self, loss: Var, into: &mut Gradients) -> Result<()> {
        let grads = self.backward(loss)?;
        for (name, v) in &self.bound {
            if let Some(g) = &grads[v.0] {
                into.add_to(name, g)?;
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every node, or `None` for nodes it
    /// does not depend on.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref();
        let (m, n) = (y.rows(), y.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, transpose_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (am, ak) = (av.rows(), av.cols());
                let (bm, bn) = (bv.rows(), bv.cols());
                let mut da = vec![0.0; am * ak];
                let mut db = vec![0.0; bm * bn];
                if *transpose_b {
                    // y = a·bᵀ: da = g·b, db = gᵀ·a
                    gemm(g.data(), m, n, false, bv.data(), bm, bn, false, &mut da, false);
                    gemm(g.data(), m, n, true, av.data(), am, ak, false, &mut db, false);
                } else {
                    // y = a·b: da = g·bᵀ, db = aᵀ·g
                    gemm(g.data(), m, n, false, bv.data(), bm, bn, true, &mut da, false);
                    gemm(av.data(), am, ak, true, g.data(), m, n, false, &mut db, false);
                }
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::AddRow { x, bias } => {
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, y.shape(), g.data().to_vec());
                accumulate(grads, *bias, self.value(*bias).shape(), db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, self.value(*a).shape(), g.data().to_vec());
                accumulate(grads, *b, self.value(*b).shape(), g.data().to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, self.value(*a).shape(), g.data().to_vec());
                accumulate(
                    grads,
                    *b,
                    self.value(*b).shape(),
                    g.data().iter().map(|v| -v).collect(),
                );
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                let db = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Affine { x, scale } => {
                let dx = g.data().iter().map(|v| v * scale).collect();
                accumulate(grads, *x, self.value(*x).shape(), dx);
            }
            Op::Sigmoid(x) => {
                let dx = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                accumulate(grads, *x, self.value(*x).shape(), dx);
            }
            Op::Tanh(x) => {
                let dx = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                accumulate(grads, *x, self.value(*x).shape(), dx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, &v)| {
                        let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                        g * (0.5 * (1.0 + t) + 0.5 * v * dt)
                    })
                    .collect();
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::SoftmaxRows(x) => {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                let nf = n as f64;
                for i in 0..m {
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let hr = &xhat[i * n..(i + 1) * n];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        dx[i * n + j] = inv_std[i] / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), dx);
                accumulate(grads, *gamma, self.value(*gamma).shape(), dgamma);
                accumulate(grads, *beta, self.value(*beta).shape(), dbeta);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut dt = vec![0.0; tv.len()];
                for (i, &id) in ids.iter().enumerate() {
                    let src = &g.data()[i * n..(i + 1) * n];
                    for (d, v) in dt[id * n..(id + 1) * n].iter_mut().zip(src) {
                        *d += v;
                    }
                }
                accumulate(grads, *table, tv.shape(), dt);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut dp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        dp.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    accumulate(grads, p, pv.shape(), dp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.len();
                    accumulate(grads, p, pv.shape(), g.data()[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let xn = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for i in 0..m {
                    dx[i * xn + start..i * xn + start + n].copy_from_slice(g.row(i));
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.len()];
                dx[start * n..(start + m) * n].copy_from_slice(g.data());
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::RepeatRows(x) => {
                let mut dx = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, v) in dx.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), dx);
            }
            Op::Transpose(x) => {
                let dx = transpose(g);
                accumulate(grads, *x, self.value(*x).shape(), dx.into_data());
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let s = g.data()[0];
                accumulate(grads, *x, xv.shape(), vec![s; xv.len()]);
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let s = g.data()[0];
                let mut dl: Vec<f64> = probs.iter().map(|p| s * p).collect();
                dl[*target] -= s;
                accumulate(grads, *logits, self.value(*logits).shape(), dl);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape"));
        }
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (m, n) = (t.rows(), t.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = t.data()[i * n + j];
        }
    }
    Tensor::matrix(n, m, out).expect("transpose shape")
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
