//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in creation
//! order, which is already a topological order, so [`Tape::backward`] only
//! has to walk the node list once in reverse.

use rand::Rng;
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::{Tensor, TensorError};

/// Row/column admission mask for attention scores; `true` means visible.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(rows * cols, allowed.len(), "mask size");
        Self { rows, cols, allowed }
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|k| k % n <= k / n).collect();
        Self::new(n, n, allowed)
    }

    /// Same column admission for every query row.
    pub fn columns(rows: usize, cols: &[bool]) -> Self {
        let allowed = (0..rows).flat_map(|_| cols.iter().copied()).collect();
        Self::new(rows, cols.len(), allowed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Sigmoid(usize),
    Relu(usize),
    Recip(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Dropout(usize, Vec<f64>),
    Sum(usize),
    SumCols(usize),
    GatherRows(usize, Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation so that gradients can be propagated back through it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_leaves: RefCell<BTreeMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a parameter leaf; `None` when it was not reached or frozen.
    pub fn param(&self, tape: &Tape, id: ParamId) -> Option<&Tensor> {
        let node = *tape.param_leaves.borrow().get(&id)?;
        self.grads.get(node).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// A leaf that receives gradients.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Parameter leaf, recorded once per tape. Frozen parameters become
    /// constants so no gradient is ever computed for them.
    pub fn param<'t>(&'t self, store: &ParamStore, id: ParamId) -> Var<'t> {
        if let Some(&node) = self.param_leaves.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let var = self.push(store.value(id).clone(), Op::Leaf, store.is_trainable(id));
        self.param_leaves.borrow_mut().insert(id, var.id);
        var
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let mut acc = |target: usize, delta: Tensor| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!("leaves handled above"),
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, g.matmul_t(val(*b))?);
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, val(*a).t_matmul(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), "mul", |x, y| x * y)?);
                    acc(*b, g.zip_map(val(*a), "mul", |x, y| x * y)?);
                }
                Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::new(vec![1, cols], db)?);
                    acc(*a, g);
                }
                Op::MulCol(a, c) => {
                    let (m, n) = (g.rows(), g.cols());
                    let av = val(*a);
                    let cv = val(*c);
                    let mut da = vec![0.0; m * n];
                    let mut dc = vec![0.0; m];
                    for r in 0..m {
                        let s = cv.data()[r];
                        for k in 0..n {
                            let gi = g.data()[r * n + k];
                            da[r * n + k] = gi * s;
                            dc[r] += gi * av.data()[r * n + k];
                        }
                    }
                    acc(*a, Tensor::new(vec![m, n], da)?);
                    acc(*c, Tensor::new(vec![m, 1], dc)?);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        acc(p, slice_cols(&g, offset, w));
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = val(p).rows();
                        acc(p, slice_rows(&g, offset, h));
                        offset += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = val(*a);
                    let (m, n, w) = (src.rows(), src.cols(), g.cols());
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        d[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
                    }
                    acc(*a, Tensor::new(vec![m, n], d)?);
                }
                Op::SliceRows(a, start) => {
                    let src = val(*a);
                    let n = src.cols();
                    let mut d = vec![0.0; src.numel()];
                    d[start * n..start * n + g.numel()].copy_from_slice(g.data());
                    acc(*a, Tensor::new(src.shape().to_vec(), d)?);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, g.zip_map(y, "sigmoid", |gi, yi| gi * yi * (1.0 - yi))?);
                }
                Op::Relu(a) => {
                    acc(*a, g.zip_map(val(*a), "relu", |gi, x| if x > 0.0 { gi } else { 0.0 })?);
                }
                Op::Recip(a) => {
                    acc(*a, g.zip_map(&node.value, "recip", |gi, y| -gi * y * y)?);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut d = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..n {
                            d[r * n + k] = yr[k] * (gr[k] - dot);
                        }
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), d)?);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut d = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let gr = g.row(r);
                        let total: f64 = gr.iter().sum();
                        for k in 0..n {
                            d[r * n + k] = gr[k] - y.row(r)[k].exp() * total;
                        }
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), d)?);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let (m, n) = (g.rows(), g.cols());
                    let gv = val(*gain);
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for k in 0..n {
                            dgain[k] += gr[k] * xr[k];
                            dbias[k] += gr[k];
                            let dxh = gr[k] * gv.data()[k];
                            sum_d += dxh;
                            sum_dx += dxh * xr[k];
                        }
                        let nf = n as f64;
                        for k in 0..n {
                            let dxh = gr[k] * gv.data()[k];
                            dx[r * n + k] = rstd[r] / nf * (nf * dxh - sum_d - xr[k] * sum_dx);
                        }
                    }
                    acc(*gain, Tensor::new(vec![1, n], dgain)?);
                    acc(*bias, Tensor::new(vec![1, n], dbias)?);
                    acc(*x, Tensor::new(vec![m, n], dx)?);
                }
                Op::Dropout(a, scale) => {
                    let d = g.data().iter().zip(scale).map(|(gi, s)| gi * s).collect();
                    acc(*a, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    acc(*a, Tensor::full(val(*a).shape().to_vec(), s));
                }
                Op::SumCols(a) => {
                    let src = val(*a);
                    let n = src.cols();
                    let d = (0..src.numel()).map(|k| g.data()[k / n]).collect();
                    acc(*a, Tensor::new(src.shape().to_vec(), d)?);
                }
                Op::GatherRows(table, ids) => {
                    let t = val(*table);
                    let n = t.cols();
                    let mut d = vec![0.0; t.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for k in 0..n {
                            d[id * n + k] += g.data()[r * n + k];
                        }
                    }
                    acc(*table, Tensor::new(t.shape().to_vec(), d)?);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<Gradients, TensorError> {
        let grads = self.backward(loss)?;
        for (&pid, &node) in self.param_leaves.borrow().iter() {
            if let Some(g) = &grads.grads[node] {
                store.accumulate_grad(pid, g);
            }
        }
        Ok(grads)
    }
}

fn slice_cols(t: &Tensor, start: usize, width: usize) -> Tensor {
    let n = t.cols();
    let mut d = Vec::with_capacity(t.rows() * width);
    for r in 0..t.rows() {
        d.extend_from_slice(&t.data()[r * n + start..r * n + start + width]);
    }
    Tensor::new(vec![t.rows(), width], d).expect("slice width > 0")
}

fn slice_rows(t: &Tensor, start: usize, height: usize) -> Tensor {
    let n = t.cols();
    Tensor::new(vec![height, n], t.data()[start * n..(start + height) * n].to_vec()).expect("slice height > 0")
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    // Fallible shape checks rule out the std operator traits.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = self.value().zip_map(&other.value(), "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = self.value().zip_map(&other.value(), "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise (Hadamard) product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = self.value().zip_map(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x * s);
        self.unary(v, Op::Scale(self.id, s))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>, TensorError> {
        let a = self.value();
        let b = row.value();
        a.require_matrix("add_row")?;
        if b.shape() != [1, a.cols()] {
            return Err(TensorError::mismatch("add_row", a.shape(), b.shape()));
        }
        let n = a.cols();
        let d = a.data().iter().enumerate().map(|(k, v)| v + b.data()[k % n]).collect();
        let v = Tensor::new(a.shape().to_vec(), d)?;
        Ok(self.binary(row, v, Op::AddRow(self.id, row.id)))
    }

    /// Scales row `r` of an `m × n` matrix by entry `r` of an `m × 1` column.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>, TensorError> {
        let a = self.value();
        let c = col.value();
        a.require_matrix("mul_col")?;
        if c.shape() != [a.rows(), 1] {
            return Err(TensorError::mismatch("mul_col", a.shape(), c.shape()));
        }
        let n = a.cols();
        let d = a.data().iter().enumerate().map(|(k, v)| v * c.data()[k / n]).collect();
        let v = Tensor::new(a.shape().to_vec(), d)?;
        Ok(self.binary(col, v, Op::MulCol(self.id, col.id)))
    }

    pub fn transpose(self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        for v in &values {
            v.require_matrix("concat_cols")?;
            if v.rows() != rows {
                return Err(TensorError::mismatch("concat_cols", values[0].shape(), v.shape()));
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut d = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                d.extend_from_slice(v.row(r));
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(Tensor::new(vec![rows, total], d)?, Op::ConcatCols(ids), rg))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].cols();
        let mut d = Vec::new();
        let mut rows = 0;
        for v in &values {
            v.require_matrix("concat_rows")?;
            if v.cols() != cols {
                return Err(TensorError::mismatch("concat_rows", values[0].shape(), v.shape()));
            }
            d.extend_from_slice(v.data());
            rows += v.rows();
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(Tensor::new(vec![rows, cols], d)?, Op::ConcatRows(ids), rg))
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'t>, TensorError> {
        let a = self.value();
        a.require_matrix("slice_cols")?;
        if width == 0 || start + width > a.cols() {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                shape: a.shape().to_vec(),
                start,
                len: width,
            });
        }
        Ok(self.unary(slice_cols(&a, start, width), Op::SliceCols(self.id, start)))
    }

    pub fn slice_rows(self, start: usize, height: usize) -> Result<Var<'t>, TensorError> {
        let a = self.value();
        a.require_matrix("slice_rows")?;
        if height == 0 || start + height > a.rows() {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                shape: a.shape().to_vec(),
                start,
                len: height,
            });
        }
        Ok(self.unary(slice_rows(&a, start, height), Op::SliceRows(self.id, start)))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().map(stable_sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    /// Elementwise reciprocal; callers keep entries away from zero.
    pub fn recip(self) -> Var<'t> {
        let v = self.value().map(|x| 1.0 / x);
        self.unary(v, Op::Recip(self.id))
    }

    /// Row-wise softmax. Masked entries get exactly zero probability; a row
    /// with every entry masked comes out all zeros.
    pub fn softmax_rows(self, mask: Option<&Mask>) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        x.require_matrix("softmax")?;
        let (m, n) = (x.rows(), x.cols());
        if let Some(mask) = mask {
            if mask.rows() != m || mask.cols() != n {
                return Err(TensorError::mismatch("softmax mask", x.shape(), &[mask.rows(), mask.cols()]));
            }
        }
        let visible = |r: usize, c: usize| mask.is_none_or(|mk| mk.allows(r, c));
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = x.row(r);
            let max = (0..n).filter(|&c| visible(r, c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for c in 0..n {
                if visible(r, c) {
                    let e = (row[c] - max).exp();
                    out[r * n + c] = e;
                    total += e;
                }
            }
            for v in &mut out[r * n..(r + 1) * n] {
                *v /= total;
            }
        }
        Ok(self.unary(Tensor::new(vec![m, n], out)?, Op::Softmax(self.id)))
    }

    /// Softmax along `axis` (0 = down columns, 1 = across rows).
    pub fn softmax(self, axis: usize) -> Result<Var<'t>, TensorError> {
        match axis {
            1 => self.softmax_rows(None),
            0 => Ok(self.transpose().softmax_rows(None)?.transpose()),
            _ => Err(TensorError::NotMatrix {
                op: "softmax axis",
                shape: self.shape(),
            }),
        }
    }

    pub fn log_softmax_rows(self) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        x.require_matrix("log_softmax")?;
        let (m, n) = (x.rows(), x.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for c in 0..n {
                out[r * n + c] = row[c] - lse;
            }
        }
        Ok(self.unary(Tensor::new(vec![m, n], out)?, Op::LogSoftmax(self.id)))
    }

    /// Row-wise layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        x.require_matrix("layer_norm")?;
        let (m, n) = (x.rows(), x.cols());
        let gv = gain.value();
        let bv = bias.value();
        if gv.shape() != [1, n] || bv.shape() != [1, n] {
            return Err(TensorError::mismatch("layer_norm", x.shape(), gv.shape()));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for k in 0..n {
                let h = (row[k] - mean) * s;
                xhat[r * n + k] = h;
                out[r * n + k] = h * gv.data()[k] + bv.data()[k];
            }
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat: Tensor::new(vec![m, n], xhat)?,
            rstd,
        };
        Ok(self.tape.push(Tensor::new(vec![m, n], out)?, op, rg))
    }

    /// Inverted dropout: identity when `training` is false or `p == 0`,
    /// otherwise zeroes entries with probability `p` and scales survivors by
    /// `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, training: bool, rng: &mut R) -> Var<'t> {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0, 1)");
        if !training || p == 0.0 {
            return self;
        }
        let x = self.value();
        let keep = 1.0 / (1.0 - p);
        let scale: Vec<f64> = (0..x.numel()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let d = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let v = Tensor::new(x.shape().to_vec(), d).expect("same shape");
        self.unary(v, Op::Dropout(self.id, scale))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Sum across columns: `m × n` → `m × 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let x = self.value();
        let d = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let v = Tensor::new(vec![x.rows(), 1], d).expect("rows > 0");
        self.unary(v, Op::SumCols(self.id))
    }

    /// Row lookup (embedding): output row `r` is row `ids[r]` of `self`.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>, TensorError> {
        let t = self.value();
        t.require_matrix("gather_rows")?;
        if ids.is_empty() {
            return Err(TensorError::EmptyConcat);
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(TensorError::OutOfRange {
                op: "gather_rows",
                shape: t.shape().to_vec(),
                start: bad,
                len: 1,
            });
        }
        let mut d = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            d.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(vec![ids.len(), t.cols()], d)?;
        Ok(self.unary(v, Op::GatherRows(self.id, ids.to_vec())))
    }
}
