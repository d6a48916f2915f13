//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records an eager computation graph; every operation computes
//! its value immediately and appends a node describing how to propagate
//! gradients. Calling [`Tape::backward`] on a scalar node fills in the
//! gradient of that scalar with respect to every node recorded before it.
//! Evaluation order is the recording order, so identical inputs always
//! produce bit-identical values and gradients.

use crate::error::{Error, Result};
use crate::neuralcore::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddMany(Vec<usize>),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Softmax(usize),
    Dot(usize, usize),
    Embed { table: usize, row: usize },
    MaskMul { input: usize, mask: Tensor },
    Transpose(usize),
    Scale { input: usize, k: f64 },
    Sum(usize),
    CrossEntropy { scores: usize, target: usize },
    SigmoidBce { logits: usize, targets: Tensor },
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        Var(self.ops.len() - 1)
    }

    /// Record an input tensor (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient of the last `backward` target with respect to `v`.
    /// `None` means the node does not influence the target (zero gradient).
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient as a tensor, materializing zeros when the node is unused.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let t = &self.values[v.0];
                Tensor::zeros(t.rows(), t.cols())
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(Op::MatMul(a.0, b.0), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.values[a.0].add(&self.values[b.0])?;
        Ok(self.push(Op::Add(a.0, b.0), value))
    }

    /// Sum of any number of same-shaped tensors.
    pub fn add_many(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| Error::Validation("add_many needs at least one input".into()))?;
        let mut value = self.values[first.0].clone();
        for v in &vars[1..] {
            value = value.add(&self.values[v.0])?;
        }
        Ok(self.push(Op::AddMany(vars.iter().map(|v| v.0).collect()), value))
    }

    /// Stack column-compatible tensors vertically.
    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| Error::Validation("concat_rows needs at least one input".into()))?;
        let cols = self.values[first.0].cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for v in vars {
            let t = &self.values[v.0];
            if t.cols() != cols {
                return Err(Error::Validation(format!(
                    "concat_rows column mismatch: {} vs {}",
                    t.cols(),
                    cols
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(vars.iter().map(|v| v.0).collect()), value))
    }

    /// Place row-compatible tensors side by side.
    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| Error::Validation("concat_cols needs at least one input".into()))?;
        let rows = self.values[first.0].rows();
        let mut cols = 0;
        for v in vars {
            let t = &self.values[v.0];
            if t.rows() != rows {
                return Err(Error::Validation(format!(
                    "concat_cols row mismatch: {} vs {}",
                    t.rows(),
                    rows
                )));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for v in vars {
            let t = &self.values[v.0];
            for r in 0..rows {
                for c in 0..t.cols() {
                    out.set(r, offset + c, t.get(r, c));
                }
            }
            offset += t.cols();
        }
        Ok(self.push(Op::ConcatCols(vars.iter().map(|v| v.0).collect()), out))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(f64::tanh);
        self.push(Op::Tanh(a.0), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(|v| v.max(0.0));
        self.push(Op::Relu(a.0), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(sigmoid);
        self.push(Op::Sigmoid(a.0), value)
    }

    /// Softmax over a column vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = &self.values[a.0];
        if t.cols() != 1 {
            return Err(Error::Validation(format!(
                "softmax expects a column vector, got {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        let value = softmax_vec(t.data());
        let value = Tensor::from_vec(t.rows(), 1, value)?;
        Ok(self.push(Op::Softmax(a.0), value))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.values[a.0].dot(&self.values[b.0])?;
        Ok(self.push(Op::Dot(a.0, b.0), Tensor::scalar(value)))
    }

    /// Select row `row` of an embedding table as a column vector.
    pub fn embed(&mut self, table: Var, row: usize) -> Result<Var> {
        let t = &self.values[table.0];
        if row >= t.rows() {
            return Err(Error::Lookup(format!(
                "embedding row {} out of range for table with {} rows",
                row,
                t.rows()
            )));
        }
        let mut data = Vec::with_capacity(t.cols());
        for c in 0..t.cols() {
            data.push(t.get(row, c));
        }
        let value = Tensor::from_vec(t.cols(), 1, data)?;
        Ok(self.push(Op::Embed { table: table.0, row }, value))
    }

    /// Elementwise multiply by a fixed mask (inverted dropout).
    pub fn mask_mul(&mut self, input: Var, mask: Tensor) -> Result<Var> {
        let t = &self.values[input.0];
        if t.shape() != mask.shape() {
            return Err(Error::Validation(format!(
                "mask shape {:?} does not match input {:?}",
                mask.shape(),
                t.shape()
            )));
        }
        let data = t
            .data()
            .iter()
            .zip(mask.data())
            .map(|(a, m)| a * m)
            .collect();
        let value = Tensor::from_vec(t.rows(), t.cols(), data)?;
        Ok(self.push(Op::MaskMul { input: input.0, mask }, value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.values[a.0].transpose();
        self.push(Op::Transpose(a.0), value)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.values[a.0].scale(k);
        self.push(Op::Scale { input: a.0, k }, value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = self.values[a.0].data().iter().sum();
        self.push(Op::Sum(a.0), Tensor::scalar(value))
    }

    /// Negative log-softmax of `scores` at index `target`.
    pub fn cross_entropy(&mut self, scores: Var, target: usize) -> Result<Var> {
        let t = &self.values[scores.0];
        if t.cols() != 1 {
            return Err(Error::Validation(
                "cross_entropy expects a column vector of scores".into(),
            ));
        }
        if target >= t.rows() {
            return Err(Error::Validation(format!(
                "cross_entropy target {} out of range for {} classes",
                target,
                t.rows()
            )));
        }
        let value = cross_entropy_value(t.data(), target);
        Ok(self.push(
            Op::CrossEntropy {
                scores: scores.0,
                target,
            },
            Tensor::scalar(value),
        ))
    }

    /// Summed binary cross-entropy between `sigmoid(logits)` and fixed
    /// targets, computed in a numerically safe form.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let t = &self.values[logits.0];
        if t.shape() != targets.shape() {
            return Err(Error::Validation(format!(
                "sigmoid_bce target shape {:?} does not match logits {:?}",
                targets.shape(),
                t.shape()
            )));
        }
        let mut total = 0.0;
        for (&x, &y) in t.data().iter().zip(targets.data()) {
            total += x.max(0.0) - y * x + (-x.abs()).exp().ln_1p();
        }
        Ok(self.push(
            Op::SigmoidBce {
                logits: logits.0,
                targets,
            },
            Tensor::scalar(total),
        ))
    }

    fn accumulate(&mut self, idx: usize, delta: &Tensor) {
        match &mut self.grads[idx] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            None => self.grads[idx] = Some(delta.clone()),
        }
    }

    /// Like [`Tape::accumulate`], but installs an owned tensor without
    /// cloning when the slot is still empty.
    fn accumulate_owned(&mut self, idx: usize, delta: Tensor) {
        match &mut self.grads[idx] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            None => self.grads[idx] = Some(delta),
        }
    }

    /// `grads[idx] += g · values[b]ᵀ` without a temporary.
    fn grad_add_matmul_nt(&mut self, idx: usize, g: &Tensor, b: usize) -> Result<()> {
        let (rows, cols) = (g.rows(), self.values[b].rows());
        let Tape { grads, values, .. } = self;
        grads[idx]
            .get_or_insert_with(|| Tensor::zeros(rows, cols))
            .add_matmul_nt(g, &values[b])
    }

    /// `grads[idx] += values[a]ᵀ · g` without a temporary.
    fn grad_add_matmul_tn(&mut self, idx: usize, a: usize, g: &Tensor) -> Result<()> {
        let (rows, cols) = (self.values[a].cols(), g.cols());
        let Tape { grads, values, .. } = self;
        grads[idx]
            .get_or_insert_with(|| Tensor::zeros(rows, cols))
            .add_matmul_tn(&values[a], g)
    }

    /// `grads[idx] += s · values[src]` without a temporary.
    fn grad_add_scaled(&mut self, idx: usize, src: usize, s: f64) -> Result<()> {
        let (rows, cols) = self.values[src].shape();
        let Tape { grads, values, .. } = self;
        grads[idx]
            .get_or_insert_with(|| Tensor::zeros(rows, cols))
            .add_scaled(&values[src], s)
    }

    /// Propagate gradients from a scalar node back to every input.
    ///
    /// Only leaf gradients remain readable afterwards; intermediate
    /// gradients are consumed during the traversal.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::Validation(format!(
                "backward target must be scalar, got {:?}",
                self.values[loss.0].shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if matches!(self.ops[i], Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            // Ops are matched by index so the borrow of `self.ops` ends
            // before gradient accumulation mutates `self.grads`.
            match &self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    self.grad_add_matmul_nt(a, &g, b)?;
                    self.grad_add_matmul_tn(b, a, &g)?;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &g);
                    self.accumulate_owned(b, g);
                }
                Op::AddMany(inputs) => {
                    let inputs = inputs.clone();
                    for &a in &inputs[1..] {
                        self.accumulate(a, &g);
                    }
                    self.accumulate_owned(inputs[0], g);
                }
                Op::ConcatRows(inputs) => {
                    let inputs = inputs.clone();
                    let cols = g.cols();
                    let mut start = 0;
                    for a in inputs {
                        let rows = self.values[a].rows();
                        let slice =
                            g.data()[start * cols..(start + rows) * cols].to_vec();
                        let part = Tensor::from_vec(rows, cols, slice)?;
                        self.accumulate_owned(a, part);
                        start += rows;
                    }
                }
                Op::ConcatCols(inputs) => {
                    let inputs = inputs.clone();
                    let rows = g.rows();
                    let mut start = 0;
                    for a in inputs {
                        let cols = self.values[a].cols();
                        let mut part = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                part.set(r, c, g.get(r, start + c));
                            }
                        }
                        self.accumulate_owned(a, part);
                        start += cols;
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let y = &self.values[i];
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    let ga = Tensor::from_vec(g.rows(), g.cols(), data)?;
                    self.accumulate_owned(a, ga);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let x = &self.values[a];
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    let ga = Tensor::from_vec(g.rows(), g.cols(), data)?;
                    self.accumulate_owned(a, ga);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let y = &self.values[i];
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    let ga = Tensor::from_vec(g.rows(), g.cols(), data)?;
                    self.accumulate_owned(a, ga);
                }
                Op::Softmax(a) => {
                    let a = *a;
                    let y = self.values[i].clone();
                    let gy: f64 = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * y)
                        .sum();
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| y * (g - gy))
                        .collect();
                    let ga = Tensor::from_vec(y.rows(), 1, data)?;
                    self.accumulate_owned(a, ga);
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let gs = g.scalar_value();
                    self.grad_add_scaled(a, b, gs)?;
                    self.grad_add_scaled(b, a, gs)?;
                }
                Op::Embed { table, row } => {
                    let (table, row) = (*table, *row);
                    let t = &self.values[table];
                    let (rows, cols) = t.shape();
                    let gt = self.grads[table]
                        .get_or_insert_with(|| Tensor::zeros(rows, cols));
                    for c in 0..cols {
                        let cur = gt.get(row, c);
                        gt.set(row, c, cur + g.get(c, 0));
                    }
                }
                Op::MaskMul { input, mask } => {
                    let input = *input;
                    let data = g
                        .data()
                        .iter()
                        .zip(mask.data())
                        .map(|(g, m)| g * m)
                        .collect();
                    let ga = Tensor::from_vec(g.rows(), g.cols(), data)?;
                    self.accumulate_owned(input, ga);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let ga = g.transpose();
                    self.accumulate_owned(a, ga);
                }
                Op::Scale { input, k } => {
                    let (input, k) = (*input, *k);
                    let ga = g.scale(k);
                    self.accumulate_owned(input, ga);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let t = &self.values[a];
                    let ga = Tensor::from_vec(
                        t.rows(),
                        t.cols(),
                        vec![g.scalar_value(); t.len()],
                    )?;
                    self.accumulate_owned(a, ga);
                }
                Op::CrossEntropy { scores, target } => {
                    let (scores, target) = (*scores, *target);
                    let gs = g.scalar_value();
                    let probs = softmax_vec(self.values[scores].data());
                    let data = probs
                        .iter()
                        .enumerate()
                        .map(|(j, p)| gs * (p - if j == target { 1.0 } else { 0.0 }))
                        .collect();
                    let ga = Tensor::from_vec(self.values[scores].rows(), 1, data)?;
                    self.accumulate_owned(scores, ga);
                }
                Op::SigmoidBce { logits, targets } => {
                    let logits = *logits;
                    let gs = g.scalar_value();
                    let data = self.values[logits]
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(x, y)| gs * (sigmoid(*x) - y))
                        .collect();
                    let shape = self.values[logits].shape();
                    let ga = Tensor::from_vec(shape.0, shape.1, data)?;
                    self.accumulate_owned(logits, ga);
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of a slice with max subtraction.
pub fn softmax_vec(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Negative log-softmax at `target`, with max subtraction.
pub fn cross_entropy_value(scores: &[f64], target: usize) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    z.ln() + m - scores[target]
}
