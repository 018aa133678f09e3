//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every differentiable operation executed during one
//! forward pass. Parameters are borrowed from a [`ParamStore`] rather than
//! copied; constants are owned by the tape. [`Graph::backward`] walks the
//! tape in exact reverse order and returns one gradient buffer per node.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, stable_sigmoid, Tensor};

/// Clamp applied inside the logarithms of the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GatherRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    RowDot(NodeId, NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Vec<bool>,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Bce {
        p: NodeId,
        target: Vec<T>,
        scale: T,
    },
    Sum(NodeId),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::RowDot(..) => "row_dot",
            Op::Attention { .. } => "attention",
            Op::Bce { .. } => "bce_loss",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node<T> {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient of each parameter of the store, `None` where the parameter
    /// did not take part in the forward pass.
    pub fn params(&self) -> Vec<Option<Vec<T>>> {
        self.param_nodes
            .iter()
            .map(|n| n.and_then(|id| self.grads[id.0].clone()))
            .collect()
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_nodes[id.index()].and_then(|n| self.grads[n.0].as_deref())
    }
}

fn zeros_like<T: Real>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.store.value(*p),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.value(id).data()
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<NodeId> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// The tape node of a stored parameter; created once per graph.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(n);
        n
    }

    fn matrix_dims(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(dim_err(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = zeros_like(m * n);
        matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// `a[m×k] · b[n×k]ᵀ`, the layout of a linear layer with `[out × in]` weights.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(dim_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = zeros_like(m * n);
        matmul_nt_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&shape, out)?, Op::Add(a, b), rg)
    }

    /// Broadcast-add a length-n vector to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.matrix_dims(x, "add_row")?;
        if self.shape(bias) != [n] {
            return Err(dim_err("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for i in 0..m {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(Tensor::new(&[m, n], out)?, Op::AddRow(x, bias), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&shape, out)?, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let out: Vec<T> = self.data(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(&shape, out)?, Op::Scale(a, s), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.data(a).iter().map(|&x| stable_sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(&shape, out)?, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.data(a).iter().map(|&x| x.max(T::zero())).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(&shape, out)?, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.data(a).iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(&shape, out)?, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (m, n) = self.matrix_dims(x, "layer_norm")?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let nf = T::lit(n as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let xs = self.data(x);
        let g = self.data(gamma);
        let b = self.data(beta);
        let mut xhat = zeros_like(m * n);
        let mut inv_std = zeros_like(m);
        let mut out = zeros_like(m * n);
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::new(&[m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Rows `ids` of an `[r×d]` table (embedding lookup).
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (r, d) = self.matrix_dims(table, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Contract(alloc::format!(
                "gather_rows: row {bad} out of range for table with {r} rows"
            )));
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        self.push(
            Tensor::new(&[ids.len(), d], out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.matrix_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mi, ni) = self.matrix_dims(p, "concat_cols")?;
            if mi != m {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(&[m, total], out)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Dot product of matching rows: `out[i] = a[i] · b[i]`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, d) = self.matrix_dims(a, "row_dot")?;
        if self.shape(b) != [m, d] {
            return Err(dim_err("row_dot", self.shape(a), self.shape(b)));
        }
        let (xa, xb) = (self.data(a), self.data(b));
        let out: Vec<T> = (0..m)
            .map(|i| {
                xa[i * d..(i + 1) * d]
                    .iter()
                    .zip(&xb[i * d..(i + 1) * d])
                    .map(|(&x, &y)| x * y)
                    .sum()
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m], out)?, Op::RowDot(a, b), rg)
    }

    /// Masked multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch·seq × width]` with heads laid out as
    /// contiguous column blocks. `mask[b·seq + j]` marks real (non-padding)
    /// key positions; padded keys receive exactly zero weight and their
    /// values are never read.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: &[bool],
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<NodeId> {
        let (rows, width) = self.matrix_dims(q, "attention")?;
        if self.shape(k) != [rows, width] || self.shape(v) != [rows, width] {
            return Err(dim_err("attention", self.shape(q), self.shape(k)));
        }
        if rows != batch * seq || mask.len() != rows || heads == 0 || width % heads != 0 {
            return Err(dim_err("attention", &[rows, width], &[batch, seq, heads]));
        }
        let dh = width / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = zeros_like(batch * heads * seq * seq);
        let mut out = zeros_like(rows * width);
        let mut scores = zeros_like::<T>(seq);
        for b in 0..batch {
            let valid = &mask[b * seq..(b + 1) * seq];
            for h in 0..heads {
                let col = h * dh;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * width + col..][..dh];
                    let mut max = T::neg_infinity();
                    for j in 0..seq {
                        if !valid[j] {
                            continue;
                        }
                        let kj = &kd[(b * seq + j) * width + col..][..dh];
                        let s = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    let mut denom = T::zero();
                    for j in 0..seq {
                        if valid[j] {
                            let e = (scores[j] - max).exp();
                            scores[j] = e;
                            denom = denom + e;
                        }
                    }
                    if denom == T::zero() {
                        continue;
                    }
                    let p_row = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let o_row = &mut out[(b * seq + i) * width + col..][..dh];
                    for j in 0..seq {
                        if !valid[j] {
                            continue;
                        }
                        let p = scores[j] / denom;
                        p_row[j] = p;
                        let vj = &vd[(b * seq + j) * width + col..][..dh];
                        for (o, &vv) in o_row.iter_mut().zip(vj) {
                            *o = *o + p * vv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            Tensor::new(&[rows, width], out)?,
            Op::Attention {
                q,
                k,
                v,
                mask: mask.to_vec(),
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        )
    }

    /// Summed binary cross-entropy `scale · Σ −[y ln p + (1−y) ln(1−p)]`,
    /// with each logarithm's argument clamped below at [`BCE_EPS`].
    pub fn bce_loss(&mut self, p: NodeId, target: &[T], scale: T) -> Result<NodeId> {
        let n = self.value(p).len();
        if target.len() != n {
            return Err(dim_err("bce_loss", self.shape(p), &[target.len()]));
        }
        let eps = T::lit(BCE_EPS);
        let mut total = T::zero();
        for (&pv, &y) in self.data(p).iter().zip(target) {
            let pos = -(pv.max(eps)).ln();
            let neg = -((T::one() - pv).max(eps)).ln();
            total = total + y * pos + (T::one() - y) * neg;
        }
        let rg = self.rg(p);
        self.push(
            Tensor::scalar(total * scale),
            Op::Bce {
                p,
                target: target.to_vec(),
                scale,
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.data(a).iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward from non-scalar of shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(NodeId(idx), &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn backprop(&self, id: NodeId, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id.0];
        let out = self.value(id).data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(*a));
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let ga = acc_buf(grads, *a, m * k);
                    matmul_nt_acc(g, self.data(*b), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = acc_buf(grads, *b, k * n);
                    matmul_tn_acc(self.data(*a), g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = dims2(self.shape(*a));
                let n = self.shape(*b)[0];
                if self.rg(*a) {
                    let ga = acc_buf(grads, *a, m * k);
                    matmul_acc(g, self.data(*b), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = acc_buf(grads, *b, n * k);
                    matmul_tn_acc(g, self.data(*a), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for x in [*a, *b] {
                    if self.rg(x) {
                        add_into(acc_buf(grads, x, g.len()), g);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.rg(*x) {
                    add_into(acc_buf(grads, *x, g.len()), g);
                }
                if self.rg(*bias) {
                    let n = self.value(*bias).len();
                    let gb = acc_buf(grads, *bias, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let other = self.data(*b);
                    let ga = acc_buf(grads, *a, g.len());
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(other) {
                        *o = *o + gv * y;
                    }
                }
                if self.rg(*b) {
                    let other = self.data(*a);
                    let gb = acc_buf(grads, *b, g.len());
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(other) {
                        *o = *o + gv * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = acc_buf(grads, *a, g.len());
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv * *s;
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc_buf(grads, *a, g.len());
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    *o = *o + gv * y * (T::one() - y);
                }
            }
            Op::Relu(a) => {
                let xs = self.data(*a);
                let ga = acc_buf(grads, *a, g.len());
                for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(xs) {
                    if x > T::zero() {
                        *o = *o + gv;
                    }
                }
            }
            Op::Gelu(a) => {
                let xs = self.data(*a);
                let ga = acc_buf(grads, *a, g.len());
                for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(xs) {
                    *o = *o + gv * gelu_grad(x);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gamma).len();
                let m = inv_std.len();
                let gam = self.data(*gamma);
                if self.rg(*gamma) {
                    let gg = acc_buf(grads, *gamma, n);
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] = gg[j] + g[i * n + j] * xhat[i * n + j];
                        }
                    }
                }
                if self.rg(*beta) {
                    let gb = acc_buf(grads, *beta, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
                if self.rg(*x) {
                    let nf = T::lit(n as f64);
                    let gx = acc_buf(grads, *x, m * n);
                    let mut dxhat = zeros_like::<T>(n);
                    for i in 0..m {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            let d = g[i * n + j] * gam[j];
                            dxhat[j] = d;
                            s1 = s1 + d;
                            s2 = s2 + d * xhat[i * n + j];
                        }
                        let f = inv_std[i] / nf;
                        for j in 0..n {
                            let v = f * (nf * dxhat[j] - s1 - xhat[i * n + j] * s2);
                            gx[i * n + j] = gx[i * n + j] + v;
                        }
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let (r, d) = dims2(self.shape(*table));
                let gt = acc_buf(grads, *table, r * d);
                for (row, &i) in ids.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &g[row * d..(row + 1) * d]);
                }
            }
            Op::ConcatCols(parts) => {
                let m = self.shape(id)[0];
                let total = self.shape(id)[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let gp = acc_buf(grads, p, m * w);
                        for i in 0..m {
                            add_into(
                                &mut gp[i * w..(i + 1) * w],
                                &g[i * total + off..i * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::RowDot(a, b) => {
                let (m, d) = dims2(self.shape(*a));
                for (x, other) in [(*a, *b), (*b, *a)] {
                    if !self.rg(x) {
                        continue;
                    }
                    let od = self.data(other);
                    let gx = acc_buf(grads, x, m * d);
                    for i in 0..m {
                        for j in 0..d {
                            gx[i * d + j] = gx[i * d + j] + g[i] * od[i * d + j];
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                mask,
                batch,
                seq,
                heads,
                probs,
            } => self.attention_backward(
                g,
                grads,
                (*q, *k, *v),
                mask,
                (*batch, *seq, *heads),
                probs,
            ),
            Op::Bce { p, target, scale } => {
                let eps = T::lit(BCE_EPS);
                let pd = self.data(*p);
                let gp = acc_buf(grads, *p, pd.len());
                let f = g[0] * *scale;
                for ((o, &pv), &y) in gp.iter_mut().zip(pd).zip(target) {
                    let mut d = T::zero();
                    if pv > eps {
                        d = d - y / pv;
                    }
                    if T::one() - pv > eps {
                        d = d + (T::one() - y) / (T::one() - pv);
                    }
                    *o = *o + f * d;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let ga = acc_buf(grads, *a, n);
                for o in ga.iter_mut() {
                    *o = *o + g[0];
                }
            }
        }
    }

    fn attention_backward(
        &self,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        (q, k, v): (NodeId, NodeId, NodeId),
        mask: &[bool],
        (batch, seq, heads): (usize, usize, usize),
        probs: &[T],
    ) {
        let (rows, width) = dims2(self.shape(q));
        let dh = width / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut gq = zeros_like(rows * width);
        let mut gk = zeros_like(rows * width);
        let mut gv = zeros_like(rows * width);
        let mut dp = zeros_like::<T>(seq);
        for b in 0..batch {
            let valid = &mask[b * seq..(b + 1) * seq];
            for h in 0..heads {
                let col = h * dh;
                for i in 0..seq {
                    let p_row = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let go = &g[(b * seq + i) * width + col..][..dh];
                    let mut dot = T::zero();
                    for j in 0..seq {
                        if !valid[j] {
                            continue;
                        }
                        let vj = &vd[(b * seq + j) * width + col..][..dh];
                        let d = go.iter().zip(vj).map(|(&x, &y)| x * y).sum::<T>();
                        dp[j] = d;
                        dot = dot + d * p_row[j];
                        let gvj = &mut gv[(b * seq + j) * width + col..][..dh];
                        for (o, &x) in gvj.iter_mut().zip(go) {
                            *o = *o + p_row[j] * x;
                        }
                    }
                    let qi_off = (b * seq + i) * width + col;
                    for j in 0..seq {
                        if !valid[j] {
                            continue;
                        }
                        let ds = p_row[j] * (dp[j] - dot) * scale;
                        let kj_off = (b * seq + j) * width + col;
                        for c in 0..dh {
                            gq[qi_off + c] = gq[qi_off + c] + ds * kd[kj_off + c];
                            gk[kj_off + c] = gk[kj_off + c] + ds * qd[qi_off + c];
                        }
                    }
                }
            }
        }
        for (node, buf) in [(q, gq), (k, gk), (v, gv)] {
            if self.rg(node) {
                add_into(acc_buf(grads, node, rows * width), &buf);
            }
        }
    }
}

fn dims2(s: &[usize]) -> (usize, usize) {
    (s[0], s[1])
}

fn acc_buf<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, n: usize) -> &mut [T] {
    grads[id.0].get_or_insert_with(|| zeros_like(n))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_fwd<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, &[usize], Vec<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, shape, data) in values {
            s.add(*name, Tensor::new(shape, data.clone()).unwrap(), false);
        }
        s
    }

    #[test]
    fn matmul_identity_and_dot() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let i = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.constant(Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap());
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);

        let a = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let z = g.matmul(a, x).unwrap();
        assert_eq!(g.value(z).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_mentions_both_shapes() {
        let s = ParamStore::<f32>::new();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let s = store_with(&[("x", &[1], vec![0.0])]);
        let mut g = Graph::new(&s);
        let x = g.param(ParamId(0));
        let y = g.sigmoid(x).unwrap();
        let l = g.sum(y).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param(ParamId(0)).unwrap(), &[0.25]);
    }

    #[test]
    fn bce_examples() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let p = g.constant(Tensor::new(&[4], vec![0.5; 4]).unwrap());
        let l = g.bce_loss(p, &[1.0, 0.0, 1.0, 0.0], 1.0).unwrap();
        let v = g.value(l).item().unwrap();
        assert!((v - 4.0 * core::f64::consts::LN_2).abs() < 1e-12);

        let p = g.constant(Tensor::new(&[1], vec![1.0 - 1e-12]).unwrap());
        let l = g.bce_loss(p, &[1.0], 1.0).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-11);

        let p = g.constant(Tensor::new(&[2], vec![0.9, 0.1]).unwrap());
        let l = g.bce_loss(p, &[1.0, 0.0], 1.0).unwrap();
        let want = -(0.9f64.ln()) - (0.9f64.ln());
        assert!((g.value(l).item().unwrap() - want).abs() < 1e-12);
        assert!((want - 0.2107).abs() < 1e-4);

        let p = g.constant(Tensor::new(&[2], vec![0.9, 0.1]).unwrap());
        assert!(g.bce_loss(p, &[1.0], 1.0).is_err());
    }

    #[test]
    fn bce_saturated_f32_is_finite() {
        let s = ParamStore::<f32>::new();
        let mut g = Graph::new(&s);
        let p = g.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
        let l = g.bce_loss(p, &[0.0, 1.0], 1.0).unwrap();
        let v = g.value(l).item().unwrap();
        assert!(v.is_finite());
        assert!((v - 2.0 * 27.631).abs() < 0.01);
    }

    #[test]
    fn gather_scatters_only_to_gathered_rows() {
        let s = store_with(&[("e", &[6, 2], (0..12).map(f64::from).collect())]);
        let mut g = Graph::new(&s);
        let e = g.param(ParamId(0));
        let m = g.gather_rows(e, &[2, 5]).unwrap();
        assert_eq!(g.value(m).data(), &[4.0, 5.0, 10.0, 11.0]);
        let l = g.sum(m).unwrap();
        let grads = g.backward(l).unwrap();
        let ge = grads.param(ParamId(0)).unwrap();
        for r in 0..6 {
            let nz = ge[r * 2] != 0.0 || ge[r * 2 + 1] != 0.0;
            assert_eq!(nz, r == 2 || r == 5);
        }
        assert!(g.gather_rows(e, &[6]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let s = store_with(&[("x", &[3], vec![1.0, 2.0, 3.0])]);
        let mut g = Graph::new(&s);
        let x = g.param(ParamId(0));
        let y = g.sigmoid(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn param_node_is_shared() {
        let s = store_with(&[("x", &[2], vec![1.0, 2.0])]);
        let mut g = Graph::new(&s);
        let a = g.param(ParamId(0));
        let b = g.param(ParamId(0));
        assert_eq!(a, b);
        // d/dx sum(x*x) = 2x
        let sq = g.mul(a, b).unwrap();
        let l = g.sum(sq).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param(ParamId(0)).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn attention_ignores_padded_keys() {
        let q = Tensor::new(&[3, 2], vec![0.1, 0.2, 0.3, -0.1, 0.5, 0.4]).unwrap();
        let k = Tensor::new(&[3, 2], vec![0.2, 0.1, -0.3, 0.2, 0.0, 0.9]).unwrap();
        let v1 = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut v2 = v1.clone();
        v2.data_mut()[4] = 100.0;
        v2.data_mut()[5] = -7.0;
        let mask = [true, true, false];
        let s = ParamStore::<f64>::new();
        let mut outs = Vec::new();
        for v in [v1, v2] {
            let mut g = Graph::new(&s);
            let (qn, kn, vn) = (
                g.constant(q.clone()),
                g.constant(k.clone()),
                g.constant(v),
            );
            let o = g.attention(qn, kn, vn, &mask, 1, 3, 1).unwrap();
            outs.push(g.value(o).data()[..4].to_vec());
        }
        assert_eq!(outs[0], outs[1]);
    }
}
