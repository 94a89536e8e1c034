//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably and records every operation
//! in creation order, which is already a topological order. [`Tape::backward`]
//! walks the records once in reverse and returns [`Gradients`] keyed by
//! parameter; the caller folds them into the store before an optimizer step.
//! Because the store is only borrowed, any number of tapes can run inference
//! over the same frozen parameters concurrently.

use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, log_sigmoid, sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam: AdamState,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Parameter {
            name,
            grad: zeros.clone(),
            adam: AdamState {
                first_moment: zeros.clone(),
                second_moment: zeros,
                step: 0,
            },
            value,
        }
    }
}

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!(
                "parameter {name} registered twice"
            )));
        }
        if value.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "parameter {name} must be rank 2, got {:?}",
                value.shape()
            )));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.by_param {
            self.params[id.0].grad.add_assign(g);
        }
    }
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the parameter was unreachable from
    /// the loss (its gradient is zero).
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// [m,n] + broadcast [1,n]
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// [m,n] * broadcast [1,1]
    MulScalar(Var, Var),
    /// mul * x + add
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    SoftmaxRows(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
    requires_grad: bool,
}

/// Ordered record of operations and their values.
pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    param_nodes: BTreeMap<ParamId, Var>,
}

fn rank2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape().len() {
        1 | 2 => Ok((t.rows(), t.cols())),
        _ => Err(Error::Contract(format!(
            "tape values must be rank ≤ 2, got {:?}",
            t.shape()
        ))),
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn as_matrix(t: Tensor) -> Result<Tensor> {
        let (r, c) = rank2(&t)?;
        if t.shape().len() == 1 {
            t.reshape(vec![r, c])
        } else {
            Ok(t)
        }
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        let value = Self::as_matrix(value)?;
        Ok(self.push(Op::Constant, value, false))
    }

    /// Like [`Tape::constant`] but without copying the tensor.
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Result<Var> {
        if value.shape().len() != 2 {
            return self.constant(value.clone());
        }
        self.nodes.push(Node {
            op: Op::Constant,
            value: Cow::Borrowed(value),
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf for a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Cow::Borrowed(&self.params.get(id).value),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul_nt", &[m, k], &[n, k2]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulNt(a, b), Tensor::new(vec![m, n], out)?, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(Op::Transpose(a), value, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shapes checked");
        let rg = self.rg(a) || self.rg(b);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (r, n2) = self.shape(row);
        if r != 1 || n != n2 {
            return Err(Error::dim("add_row", &[m, n], &[r, n2]));
        }
        let bias = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, b) in chunk.iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), Tensor::new(vec![m, n], data)?, rg))
    }

    /// Multiplies every entry of `a` by the single value of `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            let (r, c) = self.shape(s);
            return Err(Error::dim("mul_scalar", &[1, 1], &[r, c]));
        }
        let k = self.value(s).item();
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Op::MulScalar(a, s), value, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// `factor * a + offset`
    pub fn affine(&mut self, a: Var, factor: f64, offset: f64) -> Var {
        let value = self.value(a).map(|x| factor * x + offset);
        let rg = self.rg(a);
        self.push(Op::Affine(a, factor), value, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(Op::Tanh(a), value, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), value, rg)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log_sigmoid);
        let rg = self.rg(a);
        self.push(Op::LogSigmoid(a), value, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(Op::SoftmaxRows(a), value, rg)
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (r0, c0) = self.shape(first);
        let value = match axis {
            0 => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in inputs {
                    let (r, c) = self.shape(v);
                    if c != c0 {
                        return Err(Error::dim("concat", &[r0, c0], &[r, c]));
                    }
                    rows += r;
                    data.extend_from_slice(self.value(v).data());
                }
                Tensor::new(vec![rows, c0], data)?
            }
            1 => {
                let mut cols = 0;
                for &v in inputs {
                    let (r, c) = self.shape(v);
                    if r != r0 {
                        return Err(Error::dim("concat", &[r0, c0], &[r, c]));
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row_slice(i));
                    }
                }
                Tensor::new(vec![r0, cols], data)?
            }
            _ => return Err(Error::Contract(format!("concat axis {axis} out of range"))),
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            value,
            rg,
        ))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start + len > n || len == 0 {
            return Err(Error::dim("slice_cols", &[m, n], &[start, len]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src.row_slice(i)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Op::SliceCols { input: a, start },
            Tensor::new(vec![m, len], data)?,
            rg,
        ))
    }

    /// Embedding lookup: rows of `table` at `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(table);
        if indices.is_empty() {
            return Err(Error::Contract("gather of zero rows".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Contract(format!(
                "row index {bad} out of range for {m} rows"
            )));
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(src.row_slice(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            Tensor::new(vec![indices.len(), n], data)?,
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a), Tensor::scalar(s), rg)
    }

    /// Multiplies by a fixed mask (e.g. dropout); the mask gets no gradient.
    pub fn apply_mask(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let m = self.constant(mask)?;
        self.mul(a, m)
    }

    /// Reverse sweep from a scalar `loss`; each node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let y = node.value.as_ref();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    out.by_param.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = self.shape(*b).1;
                    if self.rg(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm_nt(g.data(), self.value(*b).data(), &mut da, m, n, k);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm_tn(self.value(*a).data(), g.data(), &mut db, k, m, n);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = self.shape(*b).0;
                    if self.rg(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm_nn(g.data(), self.value(*b).data(), &mut da, m, n, k);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let mut db = vec![0.0; n * k];
                        gemm_tn(g.data(), self.value(*a).data(), &mut db, n, m, k);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::Transpose(a) => {
                    self.acc(&mut grads, *a, g.transpose().into_data());
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g.data().to_vec());
                    }
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g.into_data());
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let n = g.cols();
                        let mut db = vec![0.0; n];
                        for chunk in g.data().chunks(n) {
                            for (d, x) in db.iter_mut().zip(chunk) {
                                *d += x;
                            }
                        }
                        self.acc(&mut grads, *row, db);
                    }
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g.into_data());
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g.data().iter().map(|x| -x).collect());
                    }
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g.into_data());
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let d = zip(g.data(), self.value(*b).data(), |x, y| x * y);
                        self.acc(&mut grads, *a, d);
                    }
                    if self.rg(*b) {
                        let d = zip(g.data(), self.value(*a).data(), |x, y| x * y);
                        self.acc(&mut grads, *b, d);
                    }
                }
                Op::MulScalar(a, s) => {
                    if self.rg(*s) {
                        let ds: f64 = g
                            .data()
                            .iter()
                            .zip(self.value(*a).data())
                            .map(|(x, y)| x * y)
                            .sum();
                        self.acc(&mut grads, *s, vec![ds]);
                    }
                    if self.rg(*a) {
                        let k = self.value(*s).item();
                        self.acc(&mut grads, *a, g.data().iter().map(|x| x * k).collect());
                    }
                }
                Op::Affine(a, factor) => {
                    self.acc(
                        &mut grads,
                        *a,
                        g.data().iter().map(|x| x * factor).collect(),
                    );
                }
                Op::Tanh(a) => {
                    let d = zip(g.data(), y.data(), |gi, yi| gi * (1.0 - yi * yi));
                    self.acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip(g.data(), y.data(), |gi, yi| gi * yi * (1.0 - yi));
                    self.acc(&mut grads, *a, d);
                }
                Op::LogSigmoid(a) => {
                    let d = zip(g.data(), self.value(*a).data(), |gi, xi| gi * sigmoid(-xi));
                    self.acc(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let n = y.cols();
                    let mut d = vec![0.0; y.len()];
                    for ((drow, grow), yrow) in d
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .zip(y.data().chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o = yi * (gi - dot);
                        }
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::Concat { inputs, axis } => {
                    let (rows, cols) = (g.rows(), g.cols());
                    let mut offset = 0;
                    for &v in inputs {
                        let (r, c) = self.shape(v);
                        if self.rg(v) {
                            let d = if *axis == 0 {
                                g.data()[offset * cols..(offset + r) * cols].to_vec()
                            } else {
                                let mut d = Vec::with_capacity(r * c);
                                for i in 0..rows {
                                    d.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                                }
                                d
                            };
                            self.acc(&mut grads, v, d);
                        }
                        offset += if *axis == 0 { r } else { c };
                    }
                }
                Op::SliceCols { input, start } => {
                    let n = self.shape(*input).1;
                    let len = g.cols();
                    self.acc_with(&mut grads, *input, |d| {
                        for (i, grow) in g.data().chunks(len).enumerate() {
                            for (o, x) in d[i * n + start..i * n + start + len].iter_mut().zip(grow)
                            {
                                *o += x;
                            }
                        }
                    });
                }
                Op::GatherRows { table, indices } => {
                    let n = self.shape(*table).1;
                    self.acc_with(&mut grads, *table, |d| {
                        for (r, &i) in indices.iter().enumerate() {
                            for (o, x) in d[i * n..(i + 1) * n].iter_mut().zip(g.row_slice(r)) {
                                *o += x;
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.acc(&mut grads, *a, vec![g.item(); n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    self.acc(&mut grads, *a, vec![g.item() / n as f64; n]);
                }
            }
        }
        Ok(out)
    }

    /// Adds into `v`'s gradient in place, starting from zeros; avoids a
    /// dense temporary for sparse updates such as row gathers.
    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
        f(slot.data_mut());
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                    *e += d;
                }
            }
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape matches value"));
            }
        }
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_sum_gradient() {
        let mut store = ParamStore::new();
        let w = store
            .add(
                "w",
                Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap(),
            )
            .unwrap();
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        let x = tape.constant(Tensor::column(vec![1.0, 1.0])).unwrap();
        let y = tape.matmul(wv, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0)).unwrap();
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        let x = tape.constant(Tensor::scalar(1.0)).unwrap();
        let z = tape.mul(wv, x).unwrap();
        let s = tape.sigmoid(z);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().item(), 0.25);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(&[2, 2])).unwrap();
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        assert!(matches!(tape.backward(wv), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_parameters_get_no_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0)).unwrap();
        let unused = store.add("unused", Tensor::scalar(5.0)).unwrap();
        let mut tape = Tape::new(&store);
        let u = tape.param(used);
        let loss = tape.tanh(u);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        store.zero_grads();
        store.accumulate(&grads);
        assert_eq!(store.get(unused).grad.item(), 0.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
        let c = tape.constant(Tensor::row(vec![1.0])).unwrap();
        let d = tape.constant(Tensor::row(vec![2.0, 3.0])).unwrap();
        let cat = tape.concat(&[c, d], 1).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 2.0, 3.0]);
    }

    /// Every op composed into one graph, checked against central differences.
    #[test]
    fn composed_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let a = store
            .add("a", Tensor::randn(&[3, 4], 0.5, &mut rng))
            .unwrap();
        let b = store
            .add("b", Tensor::randn(&[4, 2], 0.5, &mut rng))
            .unwrap();
        let bias = store
            .add("bias", Tensor::randn(&[1, 2], 0.5, &mut rng))
            .unwrap();
        let table = store
            .add("table", Tensor::randn(&[5, 4], 0.5, &mut rng))
            .unwrap();
        let s = store.add("s", Tensor::scalar(0.7)).unwrap();

        let build = |tape: &mut Tape| -> Result<Var> {
            let av = tape.param(a);
            let bv = tape.param(b);
            let h = tape.matmul(av, bv)?;
            let biasv = tape.param(bias);
            let h = tape.add_row(h, biasv)?;
            let h = tape.tanh(h);
            let tv = tape.param(table);
            let rows = tape.gather_rows(tv, &[4, 1, 4])?;
            let att = tape.matmul_nt(rows, av)?; // 3×3
            let att = tape.softmax_rows(att);
            let att_t = tape.transpose(att);
            let mixed = tape.matmul(att_t, h)?; // 3×2
            let left = tape.slice_cols(mixed, 0, 1)?;
            let right = tape.slice_cols(mixed, 1, 1)?;
            let prod = tape.mul(left, right)?;
            let sv = tape.param(s);
            let scaled = tape.mul_scalar(prod, sv)?;
            let sig = tape.sigmoid(scaled);
            let diff = tape.sub(sig, right)?;
            let cat = tape.concat(&[diff, left], 0)?;
            let cat2 = tape.concat(&[cat, cat], 1)?;
            let ls = tape.log_sigmoid(cat2);
            let shifted = tape.affine(ls, -2.0, 0.3);
            let total = tape.sum(shifted);
            let m = tape.mean(cat2);
            let total = tape.add(total, m)?;
            Ok(total)
        };
        let report = check_gradients(&store, 1e-5, build).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        assert!(report.checked > 30);
    }

    #[test]
    fn forward_and_gradients_are_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut store = ParamStore::new();
            let a = store
                .add("a", Tensor::randn(&[4, 4], 1.0, &mut rng))
                .unwrap();
            let mut tape = Tape::new(&store);
            let av = tape.param(a);
            let sm = tape.softmax_rows(av);
            let p = tape.matmul(sm, av).unwrap();
            let t = tape.tanh(p);
            let loss = tape.sum(t);
            let g = tape.backward(loss).unwrap();
            (
                tape.value(loss).item().to_bits(),
                g.get(a)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
