//! Reverse-mode differentiation over a linear tape of recorded kernels.
//!
//! A [`Tape`] borrows a [`ParamStore`] read-only; parameters enter the tape
//! lazily as leaves the first time a forward pass touches them. Every kernel
//! appends one node holding its forward value, so node ids are a topological
//! order by construction and the backward pass is a single reverse sweep.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Value substituted for the log of an impossible event. Finite so that sums
/// over log-probabilities stay finite; `exp(LOG_ZERO)` underflows to 0.
pub const LOG_ZERO: f64 = -1.0e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    Add(Var, Var),
    /// `[m×n] + [1×n]`, row broadcast
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    SelectSum(Var, Vec<(usize, usize)>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

/// Boolean mask for softmax kernels: `true` marks an allowed entry. Either one
/// entry per element, or one row broadcast to every row.
#[derive(Debug, Clone, Copy)]
pub enum Mask<'a> {
    Full(&'a [bool]),
    Row(&'a [bool]),
}

impl Mask<'_> {
    fn allowed(&self, r: usize, c: usize, cols: usize) -> bool {
        match self {
            Mask::Full(m) => m[r * cols + c],
            Mask::Row(m) => m[c],
        }
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        let (len, want) = match self {
            Mask::Full(m) => (m.len(), rows * cols),
            Mask::Row(m) => (m.len(), cols),
        };
        if len != want {
            return Err(Error::Shape {
                op: "mask",
                left: vec![rows, cols],
                right: vec![len],
            });
        }
        Ok(())
    }
}

/// Row-wise softmax with optional mask. Masked entries come out exactly 0.
pub fn softmax_rows(x: &Tensor, mask: Option<Mask<'_>>) -> Result<Tensor> {
    softmax_impl(x, mask, false)
}

/// Row-wise log-softmax; masked entries come out as [`LOG_ZERO`].
pub fn log_softmax_rows(x: &Tensor, mask: Option<Mask<'_>>) -> Result<Tensor> {
    softmax_impl(x, mask, true)
}

fn softmax_impl(x: &Tensor, mask: Option<Mask<'_>>, log: bool) -> Result<Tensor> {
    let (rows, cols) = (x.rows(), x.cols());
    if let Some(m) = &mask {
        m.check(rows, cols)?;
    }
    let allowed = |r: usize, c: usize| mask.as_ref().is_none_or(|m| m.allowed(r, c, cols));
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = x.row_slice(r);
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if allowed(r, c) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateMask { row: r });
        }
        let mut total = 0.0;
        for (c, &v) in row.iter().enumerate() {
            if allowed(r, c) {
                let e = (v - max).exp();
                out[r * cols + c] = e;
                total += e;
            }
        }
        let log_total = total.ln();
        for c in 0..cols {
            let o = &mut out[r * cols + c];
            if log {
                *o = if allowed(r, c) {
                    row[c] - max - log_total
                } else {
                    LOG_ZERO
                };
            } else {
                *o /= total;
            }
        }
    }
    Ok(Tensor::matrix(rows, cols, out))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
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

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(self.shape_err("matmul_bt", a, b));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        matmul_bt_into(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Op::MatMulBt(a, b), Tensor::matrix(m, n, out)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(self.shape_err(name, a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::matrix(ta.rows(), ta.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(self.shape_err("add_row", x, row));
        }
        let n = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tr.data()[i % n])
            .collect();
        let out = Tensor::matrix(tx.rows(), n, data);
        Ok(self.push(Op::AddRow(x, row), out))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(Op::Scale(x, s), out)
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 - v);
        self.push(Op::OneMinus(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(log_sigmoid);
        self.push(Op::LogSigmoid(x), out)
    }

    pub fn softmax_rows(&mut self, x: Var, mask: Option<Mask<'_>>) -> Result<Var> {
        let out = softmax_rows(self.value(x), mask)?;
        Ok(self.push(Op::Softmax(x), out))
    }

    pub fn log_softmax_rows(&mut self, x: Var, mask: Option<Mask<'_>>) -> Result<Var> {
        let out = log_softmax_rows(self.value(x), mask)?;
        Ok(self.push(Op::LogSoftmax(x), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(rows, total, data)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::matrix(rows, cols, data)))
    }

    /// Selects rows by index (repeats allowed). Embedding lookup and span
    /// slicing both go through here.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::invalid(format!("row index {i} out of range for {rows} rows")));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(idx.len(), cols, data);
        Ok(self.push(Op::GatherRows(x, idx.to_vec()), out))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.gather_rows(x, &[i])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(Op::Transpose(x), out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), out)
    }

    /// Sum of the selected `(row, col)` entries. Entries at or below
    /// [`LOG_ZERO`] are log-probabilities of impossible events; they are
    /// clamped to `LOG_ZERO` with a warning.
    pub fn select_sum(&mut self, x: Var, idx: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(x);
        let mut total = 0.0;
        for &(r, c) in idx {
            if r >= t.rows() || c >= t.cols() {
                return Err(Error::invalid(format!(
                    "entry ({r}, {c}) out of range for {:?}",
                    t.shape()
                )));
            }
            let v = t.get(r, c);
            if v <= LOG_ZERO {
                log::warn!("selected entry ({r}, {c}) has zero probability; clamping its log to {LOG_ZERO}");
                total += LOG_ZERO;
            } else {
                total += v;
            }
        }
        Ok(self.push(Op::SelectSum(x, idx.to_vec()), Tensor::scalar(total)))
    }

    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        self.select_sum(x, &[(r, c)])
    }

    /// Sums a list of scalar nodes (0 when empty).
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        match terms {
            [] => Ok(self.constant(Tensor::scalar(0.0))),
            [first, rest @ ..] => {
                let mut acc = *first;
                for &t in rest {
                    acc = self.add(acc, t)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn backward(&self, root: Var) -> Result<Backward> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::NonScalarRoot(rt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut param_grads = Vec::new();
        for (&id, &v) in &self.param_nodes {
            if v.0 <= root.0 {
                if let Some(g) = grads[v.0].take() {
                    param_grads.push((id, g));
                }
            }
        }
        param_grads.sort_by_key(|(id, _)| *id);
        Ok(Backward {
            nodes: grads,
            params: param_grads,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = self.value(Var(i));
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let ga = accum_slot(grads, *a, m, k);
                matmul_bt_into(g.data(), tb.data(), ga, m, n, k);
                let gb = accum_slot(grads, *b, k, n);
                matmul_at_into(ta.data(), g.data(), gb, m, k, n);
            }
            Op::MatMulBt(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                let ga = accum_slot(grads, *a, m, k);
                matmul_into(g.data(), tb.data(), ga, m, n, k);
                let gb = accum_slot(grads, *b, n, k);
                matmul_at_into(g.data(), ta.data(), gb, m, n, k);
            }
            Op::Add(a, b) => {
                add_into(grads, *a, g, 1.0);
                add_into(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(grads, *a, g, 1.0);
                add_into(grads, *b, g, -1.0);
            }
            Op::AddRow(x, row) => {
                add_into(grads, *x, g, 1.0);
                let n = g.cols();
                let gr = accum_slot(grads, *row, 1, n);
                for r in 0..g.rows() {
                    for (o, v) in gr.iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, c) = (g.rows(), g.cols());
                let ga = accum_slot(grads, *a, r, c);
                for ((o, gv), bv) in ga.iter_mut().zip(g.data()).zip(tb.data()) {
                    *o += gv * bv;
                }
                let gb = accum_slot(grads, *b, r, c);
                for ((o, gv), av) in gb.iter_mut().zip(g.data()).zip(ta.data()) {
                    *o += gv * av;
                }
            }
            Op::Scale(x, s) => add_into(grads, *x, g, *s),
            Op::OneMinus(x) => add_into(grads, *x, g, -1.0),
            Op::Tanh(x) => unary_into(grads, *x, g, out, |_, y| 1.0 - y * y, self),
            Op::Sigmoid(x) => unary_into(grads, *x, g, out, |_, y| y * (1.0 - y), self),
            Op::LogSigmoid(x) => unary_into(grads, *x, g, out, |xv, _| sigmoid(-xv), self),
            Op::Softmax(x) => {
                let (rows, cols) = (out.rows(), out.cols());
                let gx = accum_slot(grads, *x, rows, cols);
                for r in 0..rows {
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        gx[r * cols + c] += y[c] * (gr[c] - dot);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let (rows, cols) = (out.rows(), out.cols());
                let gx = accum_slot(grads, *x, rows, cols);
                for r in 0..rows {
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    // masked entries carry no gradient
                    let live = |c: usize| y[c] > LOG_ZERO;
                    let gsum: f64 = (0..cols).filter(|&c| live(c)).map(|c| gr[c]).sum();
                    for c in (0..cols).filter(|&c| live(c)) {
                        gx[r * cols + c] += gr[c] - y[c].exp() * gsum;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = accum_slot(grads, p, rows, w);
                    for r in 0..rows {
                        let src = &g.data()[r * total + offset..r * total + offset + w];
                        for (o, v) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let gp = accum_slot(grads, p, n / cols.max(1), cols);
                    for (o, v) in gp.iter_mut().zip(&g.data()[offset..offset + n]) {
                        *o += v;
                    }
                    offset += n;
                }
            }
            Op::GatherRows(x, idx) => {
                let tx = self.value(*x);
                let (rows, cols) = (tx.rows(), tx.cols());
                let gx = accum_slot(grads, *x, rows, cols);
                for (k, &src) in idx.iter().enumerate() {
                    for (o, v) in gx[src * cols..(src + 1) * cols].iter_mut().zip(g.row_slice(k)) {
                        *o += v;
                    }
                }
            }
            Op::Transpose(x) => {
                let gt = g.transpose();
                add_into(grads, *x, &gt, 1.0);
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                let gv = g.item();
                let gx = accum_slot(grads, *x, tx.rows(), tx.cols());
                for o in gx.iter_mut() {
                    *o += gv;
                }
            }
            Op::SelectSum(x, idx) => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let gv = g.item();
                let clamped: Vec<bool> = idx.iter().map(|&(r, c)| tx.get(r, c) <= LOG_ZERO).collect();
                let gx = accum_slot(grads, *x, tx.rows(), cols);
                for (&(r, c), dead) in idx.iter().zip(clamped) {
                    if !dead {
                        gx[r * cols + c] += gv;
                    }
                }
            }
        }
    }
}

fn accum_slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(rows, cols))
        .data_mut()
}

fn add_into(grads: &mut [Option<Tensor>], v: Var, g: &Tensor, scale: f64) {
    let slot = accum_slot(grads, v, g.rows(), g.cols());
    for (o, x) in slot.iter_mut().zip(g.data()) {
        *o += scale * x;
    }
}

fn unary_into(
    grads: &mut [Option<Tensor>],
    x: Var,
    g: &Tensor,
    out: &Tensor,
    dydx: impl Fn(f64, f64) -> f64,
    tape: &Tape<'_>,
) {
    let tx = tape.value(x);
    let slot = accum_slot(grads, x, g.rows(), g.cols());
    for (((o, gv), xv), yv) in slot.iter_mut().zip(g.data()).zip(tx.data()).zip(out.data()) {
        *o += gv * dydx(*xv, *yv);
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Backward {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Backward {
    /// Gradient with respect to any node recorded before the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter reachable from the root, by id.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, t)| (*id, t))
    }

    pub fn into_gradients(self, store: &ParamStore) -> super::Gradients {
        let mut out = super::Gradients::zeros_like(store);
        for (id, t) in self.params {
            out.set(id, t);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_softmax() {
        let y = softmax_rows(&Tensor::row(vec![0.0, 0.0, 0.0]), None).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_overflow_safe() {
        let y = softmax_rows(&Tensor::row(vec![1000.0, 0.0]), None).unwrap();
        assert_eq!(y.data()[0], 1.0);
        assert!(y.data()[1] < 1e-300);
        assert!(y.is_finite());
    }

    #[test]
    fn masked_entries_are_exact_zero() {
        let mask = [true, false, true];
        let y = softmax_rows(&Tensor::row(vec![1.0, 5.0, 2.0]), Some(Mask::Row(&mask))).unwrap();
        assert_eq!(y.data()[1], 0.0);
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row_errors() {
        let mask = [false, false];
        let err = softmax_rows(&Tensor::row(vec![1.0, 2.0]), Some(Mask::Row(&mask))).unwrap_err();
        assert!(matches!(err, Error::DegenerateMask { row: 0 }));
    }

    #[test]
    fn sum_of_param_gives_ones() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::matrix(2, 3, vec![1.0; 6])).unwrap();
        let mut tape = Tape::new(&store);
        let w = tape.param(id);
        let s = tape.sum(w);
        let back = tape.backward(s).unwrap();
        let grads: Vec<_> = back.param_grads().collect();
        assert_eq!(grads.len(), 1);
        assert!(grads[0].1.data().iter().all(|&g| g == 1.0));
        assert_eq!(back.wrt(s).unwrap().item(), 1.0);
    }

    #[test]
    fn constant_root_has_no_param_gradients() {
        let mut store = ParamStore::new();
        store.zeros("w", 2, 2).unwrap();
        let mut tape = Tape::new(&store);
        let c = tape.constant(Tensor::scalar(3.0));
        let back = tape.backward(c).unwrap();
        assert_eq!(back.param_grads().count(), 0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let c = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(c), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![5.0, 5.0, -3.0]]);
        let a = log_softmax_rows(&x, None).unwrap();
        let b = softmax_rows(&x, None).unwrap().map(f64::ln);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
