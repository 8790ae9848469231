//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its value, so the node order is a
//! topological order and `backward` is a single reverse sweep. Nodes built
//! only from constants are marked as not requiring gradients and are skipped,
//! which is also how detachment works: `Tape::detach` re-enters a value as a
//! constant.

use std::rc::Rc;

use super::tensor::{log_softmax_in_place, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Exp(usize),
    LogFloor(usize, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    MaskedLogSoftmaxRows(usize, Rc<Vec<bool>>),
    NormalizeRows(usize, Vec<f64>),
    Sum(usize),
    Mean(usize),
    ConcatRows(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Squared-norm floor for row normalization; keeps all-zero rows finite.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A differentiable input (parameters, or features under test).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Same value, no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::DimensionMismatch {
                context,
                expected: sa.to_vec(),
                actual: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a.0, b.0), g))
    }

    /// `a · bᵀ`, used for pairwise similarity matrices.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a.0, b.0), g))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_vector(self.value(bias))?;
        let g = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x.0, bias.0), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a.0, b.0), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a.0, b.0), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a.0, b.0), g))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let g = self.any_grad(&[x]);
        self.push(value, Op::Scale(x.0, factor), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        let g = self.any_grad(&[x]);
        self.push(value, Op::Relu(x.0), g)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let g = self.any_grad(&[x]);
        self.push(value, Op::Exp(x.0), g)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        let g = self.any_grad(&[x]);
        self.push(value, Op::LogFloor(x.0, floor), g)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let g = self.any_grad(&[x]);
        self.push(value, Op::SoftmaxRows(x.0), g)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            log_softmax_in_place(row);
        }
        let g = self.any_grad(&[x]);
        self.push(value, Op::LogSoftmaxRows(x.0), g)
    }

    /// Row-wise log-softmax restricted to the columns where `mask` is true.
    /// Masked-out entries are 0 in the output and receive no gradient.
    /// `mask` has the same row-major layout as `x`.
    pub fn masked_log_softmax_rows(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let src = self.value(x);
        if mask.len() != src.len() {
            return Err(Error::DimensionMismatch {
                context: "masked softmax",
                expected: src.shape().to_vec(),
                actual: vec![mask.len()],
            });
        }
        let c = src.cols();
        let mut value = src.clone();
        for (row, m) in value.data_mut().chunks_mut(c).zip(mask.chunks(c)) {
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::invalid("masked softmax row with empty support"));
            }
            let lse = max
                + row
                    .iter()
                    .zip(m)
                    .filter(|(_, &keep)| keep)
                    .map(|(v, _)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            for (v, &keep) in row.iter_mut().zip(m) {
                *v = if keep { *v - lse } else { 0.0 };
            }
        }
        let g = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaskedLogSoftmaxRows(x.0, mask), g))
    }

    /// Scales each row to unit L2 norm, `x / sqrt(|x|² + NORMALIZE_EPS)`.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let c = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_mut(c) {
            let n = (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt();
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        let g = self.any_grad(&[x]);
        self.push(value, Op::NormalizeRows(x.0, norms), g)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let g = self.any_grad(&[x]);
        self.push(value, Op::Sum(x.0), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let g = self.any_grad(&[x]);
        self.push(value, Op::Mean(x.0), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero parts"))?;
        let width = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != width {
                return Err(Error::DimensionMismatch {
                    context: "concat_rows",
                    expected: vec![width],
                    actual: vec![t.cols()],
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, width, data)?;
        let g = self.any_grad(parts);
        Ok(self.push(
            value,
            Op::ConcatRows(parts.iter().map(|v| v.0).collect()),
            g,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].needs_grad {
                    accumulate(grads, *a, dy.matmul_nt(&self.nodes[*b].value)?);
                }
                if self.nodes[*b].needs_grad {
                    accumulate(grads, *b, self.nodes[*a].value.matmul_tn(dy)?);
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a·bᵀ: da = dy·b, db = dyᵀ·a
                if self.nodes[*a].needs_grad {
                    accumulate(grads, *a, dy.matmul(&self.nodes[*b].value)?);
                }
                if self.nodes[*b].needs_grad {
                    accumulate(grads, *b, dy.matmul_tn(&self.nodes[*a].value)?);
                }
            }
            Op::AddBias(x, b) => {
                if self.nodes[*x].needs_grad {
                    accumulate(grads, *x, dy.clone());
                }
                if self.nodes[*b].needs_grad {
                    let bias = &self.nodes[*b].value;
                    let c = dy.cols();
                    let mut db = vec![0.0; c];
                    for row in dy.data().chunks(c) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    accumulate(grads, *b, Tensor::new(bias.shape().to_vec(), db)?);
                }
            }
            Op::Add(a, b) => {
                if self.nodes[*a].needs_grad {
                    accumulate(grads, *a, dy.clone());
                }
                if self.nodes[*b].needs_grad {
                    accumulate(grads, *b, dy.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.nodes[*a].needs_grad {
                    accumulate(grads, *a, dy.clone());
                }
                if self.nodes[*b].needs_grad {
                    accumulate(grads, *b, dy.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[*a].needs_grad {
                    accumulate(grads, *a, dy.zip_map(&self.nodes[*b].value, |d, v| d * v));
                }
                if self.nodes[*b].needs_grad {
                    accumulate(grads, *b, dy.zip_map(&self.nodes[*a].value, |d, v| d * v));
                }
            }
            Op::Scale(x, f) => accumulate(grads, *x, dy.map(|d| d * f)),
            Op::Relu(x) => {
                let dx = dy.zip_map(&self.nodes[*x].value, |d, v| if v > 0.0 { d } else { 0.0 });
                accumulate(grads, *x, dx);
            }
            Op::Exp(x) => accumulate(grads, *x, dy.zip_map(y, |d, v| d * v)),
            Op::LogFloor(x, floor) => {
                let dx = dy.zip_map(&self.nodes[*x].value, |d, v| {
                    if v > *floor {
                        d / v
                    } else {
                        0.0
                    }
                });
                accumulate(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let c = y.cols();
                let mut dx = dy.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, p)| d * p).sum();
                    for (d, p) in drow.iter_mut().zip(yrow) {
                        *d = p * (*d - dot);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LogSoftmaxRows(x) => {
                let c = y.cols();
                let mut dx = dy.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let total: f64 = drow.iter().sum();
                    for (d, ly) in drow.iter_mut().zip(yrow) {
                        *d -= ly.exp() * total;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MaskedLogSoftmaxRows(x, mask) => {
                let c = y.cols();
                let mut dx = dy.clone();
                for ((drow, yrow), m) in dx
                    .data_mut()
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(mask.chunks(c))
                {
                    let total: f64 = drow
                        .iter()
                        .zip(m)
                        .filter(|(_, &keep)| keep)
                        .map(|(d, _)| d)
                        .sum();
                    for ((d, ly), &keep) in drow.iter_mut().zip(yrow).zip(m) {
                        *d = if keep { *d - ly.exp() * total } else { 0.0 };
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::NormalizeRows(x, norms) => {
                let c = y.cols();
                let mut dx = dy.clone();
                for ((drow, yrow), n) in dx
                    .data_mut()
                    .chunks_mut(c)
                    .zip(y.data().chunks(c))
                    .zip(norms)
                {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, v)| d * v).sum();
                    for (d, v) in drow.iter_mut().zip(yrow) {
                        *d = (*d - v * dot) / n;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let shape = self.nodes[*x].value.shape();
                accumulate(grads, *x, Tensor::full(shape, dy.item()));
            }
            Op::Mean(x) => {
                let t = &self.nodes[*x].value;
                accumulate(grads, *x, Tensor::full(t.shape(), dy.item() / t.len() as f64));
            }
            Op::ConcatRows(parts) => {
                let c = dy.cols();
                let mut offset = 0;
                for &p in parts {
                    let t = &self.nodes[p].value;
                    let n = t.rows() * c;
                    if self.nodes[p].needs_grad {
                        let slice = dy.data()[offset..offset + n].to_vec();
                        accumulate(grads, p, Tensor::new(t.shape().to_vec(), slice)?);
                    }
                    offset += n;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss (or is a constant).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// The gradient of `v`, zero-filled when no path reaches it.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
