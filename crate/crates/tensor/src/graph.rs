//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! accumulates parameter gradients.

use std::rc::Rc;

use crate::loss::{masked_ls_ce_row, CeTarget, LossError};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{self, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Rc<Tensor>),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    Gather(ParamId, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SpanScores(Var, Var, usize),
    /// Stores the per-row gradient `p - q` computed in the forward pass.
    MaskedCe(Var, Tensor),
    Sum(Var),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Computation tape bound to a parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node { op: Op::Param(id), .. } => self.params.get(*id),
            Node { value: Some(t), .. } => t,
            Node { value: None, .. } => unreachable!("only parameters are stored by reference"),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::matmul_t(self.value(a), self.value(b));
        self.push(Op::MatMulT(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    /// Add a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = tensor::add_row(self.value(a), self.value(row));
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = tensor::mul_row(self.value(a), self.value(row));
        self.push(Op::MulRow(a, row), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale_assign(s);
        self.push(Op::Scale(a, s), v)
    }

    /// Add a constant (for example an additive mask); no gradient flows to it.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(c);
        self.push(Op::AddConst(a), v)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Rc<Tensor>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.shape(), c.shape(), "mul_const shape");
        for (x, y) in v.data.iter_mut().zip(&c.data) {
            *x *= y;
        }
        self.push(Op::MulConst(a, c), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = tensor::softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Row normalization without the affine part.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let (v, inv) = tensor::layer_norm_rows(self.value(a));
        self.push(Op::LayerNorm(a, inv), v)
    }

    /// Rows `idx` of parameter `table`.
    pub fn gather(&mut self, table: ParamId, idx: &[usize]) -> Var {
        let t = self.params.get(table);
        let mut data = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor { rows: idx.len(), cols: t.cols, data };
        self.push(Op::Gather(table, idx.to_vec()), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let v = Tensor::concat_rows(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>());
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let v = Tensor::concat_cols(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>());
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_rows(start, len);
        self.push(Op::SliceRows(a, start), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        self.push(Op::SliceCols(a, start), v)
    }

    /// Row-wise span scores `out[r, j*m + d] = ts[r, j] + te[r, j + d]`,
    /// with `pad` where `j + d` runs past the row.
    pub fn span_scores(&mut self, ts: Var, te: Var, m: usize, pad: f64) -> Var {
        let (a, b) = (self.value(ts), self.value(te));
        assert_eq!(a.shape(), b.shape(), "span_scores shape");
        let mut out = Tensor::zeros(a.rows, a.cols * m);
        for r in 0..a.rows {
            tensor::span_scores_row(a.row(r), b.row(r), m, pad, out.row_mut(r));
        }
        self.push(Op::SpanScores(ts, te, m), out)
    }

    /// Sum over rows of label-smoothed cross-entropy. Classes not admitted by
    /// a row's mask get neither probability nor smoothing mass, and receive a
    /// gradient of exactly zero.
    pub fn masked_ce(&mut self, logits: Var, targets: &[CeTarget], eps: f64) -> Result<Var, LossError> {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len(), "masked_ce: one target per row");
        let mut grad = Tensor::zeros(x.rows, x.cols);
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            loss += masked_ls_ce_row(x.row(r), t, eps, Some(grad.row_mut(r)))?;
        }
        Ok(self.push(Op::MaskedCe(logits, grad), Tensor::row_vector(vec![loss])))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::row_vector(vec![s]))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.data[0]
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut out = Gradients::new(self.params.len());
        self.backward_into(loss, &mut out);
        out
    }

    pub fn backward_into(&self, loss: Var, out: &mut Gradients) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::row_vector(vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, d: Tensor| match &mut grads[v.0] {
                Some(t) => t.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, tensor::matmul_t(&g, self.value(*b)));
                    acc(&mut grads, *b, tensor::t_matmul(self.value(*a), &g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, tensor::matmul(&g, self.value(*b)));
                    acc(&mut grads, *b, tensor::t_matmul(&g, self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut d = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in d.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *row, d);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    let mut d = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for ((x, y), z) in d.data.iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *x += y * z;
                        }
                    }
                    acc(&mut grads, *row, d);
                    acc(&mut grads, *a, tensor::mul_row(&g, rv));
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.scale_assign(*s);
                    acc(&mut grads, *a, d);
                }
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::MulConst(a, c) => {
                    let mut d = g;
                    for (x, y) in d.data.iter_mut().zip(&c.data) {
                        *x *= y;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    for (x, y) in d.data.iter_mut().zip(&self.value(*a).data) {
                        if *y <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.nodes[i].value.as_ref().expect("softmax value");
                    let mut d = g;
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = d.row_mut(r);
                        let s: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - s);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm(a, inv) => {
                    let y = self.nodes[i].value.as_ref().expect("layer norm value");
                    let c = y.cols as f64;
                    let mut d = g;
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = d.row_mut(r);
                        let mg = gr.iter().sum::<f64>() / c;
                        let mgy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / c;
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = inv[r] * (*gv - mg - yv * mgy);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Gather(table, idx) => {
                    let slot = out.slot(*table, self.params.get(*table));
                    for (r, &k) in idx.iter().enumerate() {
                        for (x, y) in slot.row_mut(k).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        acc(&mut grads, *p, g.slice_rows(start, rows));
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        acc(&mut grads, *p, g.slice_cols(start, cols));
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut d = Tensor::zeros(src.rows, src.cols);
                    d.data[start * src.cols..start * src.cols + g.len()].copy_from_slice(&g.data);
                    acc(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Tensor::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        d.row_mut(r)[*start..start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SpanScores(ts, te, m) => {
                    let n = self.value(*ts).cols;
                    let mut ds = Tensor::zeros(g.rows, n);
                    let mut de = Tensor::zeros(g.rows, n);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        for j in 0..n {
                            for d in 0..(*m).min(n - j) {
                                let v = gr[j * m + d];
                                ds.data[r * n + j] += v;
                                de.data[r * n + j + d] += v;
                            }
                        }
                    }
                    acc(&mut grads, *ts, ds);
                    acc(&mut grads, *te, de);
                }
                Op::MaskedCe(logits, dl) => {
                    let mut d = dl.clone();
                    d.scale_assign(g.data[0]);
                    acc(&mut grads, *logits, d);
                }
                Op::Sum(a) => {
                    let src = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(src.rows, src.cols, g.data[0]));
                }
            }
        }
    }
}
