//! Reverse-mode differentiation over a linear operation record.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; [`Tape::backward`] walks the record in reverse
//! and accumulates adjoints. One tape serves one loss evaluation.

use super::ops::{self, Axis};
use super::{NumericError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AbsDiff(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    DivRows(Var, Vec<f64>),
    Relu(Var),
    Softmax(Var, Axis),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MaxPool(Var, Vec<usize>),
    MeanPool(Var),
    NegSqDist(Var, Var),
    LogSumExp(Var),
    Pick(Var, usize),
    /// Scalar-valued op whose local Jacobian was computed in the forward pass.
    Precomputed(Vec<(Var, Tensor)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

impl Tape {
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
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = ops::transpose(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = ops::add(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = ops::sub(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = ops::mul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise `|a - b|`.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = ops::abs_diff(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::AbsDiff(a, b), rg))
    }

    /// Sum of equally shaped values.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let (first, rest) = parts.split_first().ok_or(NumericError::Empty("add_n"))?;
        let mut out = self.value(*first).clone();
        for p in rest {
            out = ops::add(&out, self.value(*p))?;
        }
        let rg = self.needs(parts);
        Ok(self.push(out, Op::AddN(parts.to_vec()), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Divides row `r` of a matrix by `divisors[r]`.
    pub fn div_rows(&mut self, a: Var, divisors: &[f64]) -> Result<Var, NumericError> {
        let (rows, cols) = self.value(a).dims2()?;
        if divisors.len() != rows {
            return Err(NumericError::LengthMismatch(rows, divisors.len()));
        }
        let mut out = self.value(a).clone();
        for (r, chunk) in out
            .data_mut()
            .chunks_mut(cols.max(1))
            .enumerate()
            .take(rows)
        {
            for v in chunk {
                *v /= divisors[r];
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::DivRows(a, divisors.to_vec()), rg))
    }

    /// Mean of equally shaped values.
    pub fn mean_n(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let total = self.add_n(parts)?;
        Ok(self.scale(total, 1.0 / parts.len() as f64))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = ops::relu(self.value(a));
        let rg = self.needs(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var, NumericError> {
        let out = ops::softmax_axis(self.value(a), axis)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Softmax(a, axis), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = ops::concat_cols(&values)?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = ops::concat_rows(&values)?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows of a matrix by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, NumericError> {
        let t = self.value(table);
        let (n, cols) = t.dims2()?;
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(NumericError::IndexOutOfRange { index: r, len: n });
            }
            out.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(vec![rows.len(), cols], out)?;
        let rg = self.needs(&[table]);
        Ok(self.push(out, Op::GatherRows(table, rows.to_vec()), rg))
    }

    /// Column-wise max over rows (`1 × cols`). The gradient flows to the first
    /// maximal row of each column.
    pub fn max_pool(&mut self, a: Var) -> Result<Var, NumericError> {
        let idx = ops::argmax_rows_per_col(self.value(a))?;
        let out = ops::max_pool(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::MaxPool(a, idx), rg))
    }

    /// Column-wise mean over rows (`1 × cols`).
    pub fn mean_pool(&mut self, a: Var) -> Result<Var, NumericError> {
        let out = ops::mean_pool(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::MeanPool(a), rg))
    }

    /// Pairwise negative squared distances between the rows of `a` and `b`.
    pub fn neg_sq_dist(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = ops::neg_sq_dist(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::NegSqDist(a, b), rg))
    }

    /// `log Σ exp` over every entry, as a scalar.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = ops::logsumexp(self.value(a).data())?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(value), Op::LogSumExp(a), rg))
    }

    /// Scalar at flat position `index`.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        let value = *t.data().get(index).ok_or(NumericError::IndexOutOfRange {
            index,
            len: t.len(),
        })?;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(value), Op::Pick(a, index), rg))
    }

    /// Records a scalar whose partial derivatives with respect to `inputs`
    /// are supplied by the caller.
    pub fn precomputed(
        &mut self,
        value: f64,
        inputs: Vec<(Var, Tensor)>,
    ) -> Result<Var, NumericError> {
        for (v, g) in &inputs {
            if self.value(*v).shape() != g.shape() {
                return Err(NumericError::ShapeMismatch {
                    op: "precomputed",
                    lhs: self.value(*v).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        let vars: Vec<Var> = inputs.iter().map(|(v, _)| *v).collect();
        let rg = self.needs(&vars);
        Ok(self.push(Tensor::scalar(value), Op::Precomputed(inputs), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        if self.value(loss).len() != 1 {
            return Err(NumericError::NotScalar(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
        if self.nodes[target.0].requires_grad {
            accumulate(&mut grads[target.0], delta);
        }
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NumericError> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let da = ops::matmul(g, &ops::transpose(bv)?)?;
                    self.send(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = ops::matmul(&ops::transpose(av)?, g)?;
                    self.send(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                self.send(grads, *a, ops::transpose(g)?);
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.send(grads, *a, ops::mul(g, bv)?);
                self.send(grads, *b, ops::mul(g, av)?);
            }
            Op::AbsDiff(a, b) => {
                let sign = ops::zip_same("abs_diff", self.value(*a), self.value(*b), |x, y| {
                    if x > y {
                        1.0
                    } else if x < y {
                        -1.0
                    } else {
                        0.0
                    }
                })?;
                let da = ops::mul(g, &sign)?;
                self.send(grads, *b, da.map(|v| -v));
                self.send(grads, *a, da);
            }
            Op::AddN(parts) => {
                for p in parts {
                    self.send(grads, *p, g.clone());
                }
            }
            Op::Scale(a, factor) => {
                self.send(grads, *a, g.map(|v| v * factor));
            }
            Op::DivRows(a, divisors) => {
                let (_, cols) = g.dims2()?;
                let mut d = g.clone();
                for (r, chunk) in d.data_mut().chunks_mut(cols.max(1)).enumerate() {
                    for v in chunk {
                        *v /= divisors[r];
                    }
                }
                self.send(grads, *a, d);
            }
            Op::Relu(a) => {
                // Subgradient 0 at exactly 0.
                let mask =
                    ops::zip_same(
                        "relu",
                        self.value(*a),
                        g,
                        |x, gv| {
                            if x > 0.0 {
                                gv
                            } else {
                                0.0
                            }
                        },
                    )?;
                self.send(grads, *a, mask);
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                let (rows, cols) = y.dims2()?;
                let mut da = vec![0.0; rows * cols];
                match axis {
                    Axis::Rows => {
                        for r in 0..rows {
                            let dot: f64 = (0..cols).map(|c| y.get2(r, c) * g.get2(r, c)).sum();
                            for c in 0..cols {
                                da[r * cols + c] = y.get2(r, c) * (g.get2(r, c) - dot);
                            }
                        }
                    }
                    Axis::Cols => {
                        for c in 0..cols {
                            let dot: f64 = (0..rows).map(|r| y.get2(r, c) * g.get2(r, c)).sum();
                            for r in 0..rows {
                                da[r * cols + c] = y.get2(r, c) * (g.get2(r, c) - dot);
                            }
                        }
                    }
                }
                self.send(grads, *a, Tensor::new(vec![rows, cols], da)?);
            }
            Op::ConcatCols(parts) => {
                let (rows, _) = g.dims2()?;
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.value(*p).dims2()?;
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    self.send(grads, *p, Tensor::new(vec![rows, w], d)?);
                }
            }
            Op::ConcatRows(parts) => {
                let (_, cols) = g.dims2()?;
                let mut start = 0;
                for p in parts {
                    let (r, _) = self.value(*p).dims2()?;
                    let d = g.data()[start * cols..(start + r) * cols].to_vec();
                    start += r;
                    self.send(grads, *p, Tensor::new(vec![r, cols], d)?);
                }
            }
            Op::GatherRows(table, rows) => {
                if self.nodes[table.0].requires_grad {
                    let mut d = Tensor::zeros(self.value(*table).shape());
                    let cols = g.dims2()?.1;
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut d.data_mut()[r * cols..(r + 1) * cols];
                        for (x, y) in dst.iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    self.send(grads, *table, d);
                }
            }
            Op::MaxPool(a, idx) => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                let cols = idx.len();
                for (c, &r) in idx.iter().enumerate() {
                    d.data_mut()[r * cols + c] = g.data()[c];
                }
                self.send(grads, *a, d);
            }
            Op::MeanPool(a) => {
                let (rows, cols) = self.value(*a).dims2()?;
                let mut d = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    d.extend(g.data().iter().map(|v| v / rows as f64));
                }
                self.send(grads, *a, Tensor::new(vec![rows, cols], d)?);
            }
            Op::NegSqDist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (ta, dim) = av.dims2()?;
                let (tb, _) = bv.dims2()?;
                let mut da = vec![0.0; ta * dim];
                let mut db = vec![0.0; tb * dim];
                for t in 0..ta {
                    for l in 0..tb {
                        let w = g.get2(t, l);
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..dim {
                            let diff = av.get2(t, k) - bv.get2(l, k);
                            da[t * dim + k] -= 2.0 * w * diff;
                            db[l * dim + k] += 2.0 * w * diff;
                        }
                    }
                }
                self.send(grads, *a, Tensor::new(vec![ta, dim], da)?);
                self.send(grads, *b, Tensor::new(vec![tb, dim], db)?);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let lse = node.value.item();
                let gv = g.item();
                self.send(grads, *a, x.map(|v| gv * (v - lse).exp()));
            }
            Op::Pick(a, index) => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                d.data_mut()[*index] = g.item();
                self.send(grads, *a, d);
            }
            Op::Precomputed(inputs) => {
                let gv = g.item();
                for (v, local) in inputs {
                    self.send(grads, *v, local.map(|x| x * gv));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_input() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[vec![0.5, -2.0, 3.0]]).unwrap());
        let x = tape.constant(Tensor::from_rows(&[vec![1.0], vec![4.0], vec![-0.25]]).unwrap());
        let y = tape.matmul(w, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 4.0, -0.25]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn unused_param_has_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_rows(&[vec![2.0]]).unwrap());
        let b = tape.param(Tensor::from_rows(&[vec![3.0]]).unwrap());
        let y = tape.mul(a, a).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[4.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_rows(&[vec![0.0, 1.0, -1.0]]).unwrap());
        let r = tape.relu(a);
        let s = tape.logsumexp(r).unwrap();
        let grads = tape.backward(s).unwrap();
        let g = grads.get(a).unwrap().data();
        assert_eq!(g[0], 0.0);
        assert!(g[1] > 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn max_pool_routes_ties_to_lowest_row() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_rows(&[vec![1.0], vec![1.0], vec![0.0]]).unwrap());
        let m = tape.max_pool(a).unwrap();
        let s = tape.pick(m, 0).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(a), Err(NumericError::NotScalar(_))));
    }
}
