//! Reverse-mode differentiation.
//!
//! Model code is written once against [`Exec`]. Running it with [`Eager`]
//! computes values only and allocates no tape; running it with [`Tape`]
//! records every primitive so [`Tape::backward`] can replay the chain rule.

use crate::ctc;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The primitive operations the model is built from.
pub trait Exec<T: Scalar> {
    type Value: Clone;

    /// A differentiable input (parameter or data we want gradients for).
    fn leaf(&mut self, t: &Tensor<T>) -> Self::Value;
    /// A value that never receives a gradient (masks, dropout keeps).
    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// `a · bᵀ`
    fn matmul_t(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: T) -> Self::Value;
    fn add_scalar(&mut self, a: &Self::Value, c: T) -> Self::Value;
    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value;
    fn tanh(&mut self, a: &Self::Value) -> Self::Value;
    fn exp(&mut self, a: &Self::Value) -> Self::Value;
    fn powf(&mut self, a: &Self::Value, p: T) -> Self::Value;
    fn broadcast_rows(&mut self, a: &Self::Value, rows: usize) -> Result<Self::Value>;
    fn broadcast_cols(&mut self, a: &Self::Value, cols: usize) -> Result<Self::Value>;
    fn sum_all(&mut self, a: &Self::Value) -> Self::Value;
    fn sum_rows(&mut self, a: &Self::Value) -> Self::Value;
    fn sum_cols(&mut self, a: &Self::Value) -> Self::Value;
    fn masked_softmax_rows(&mut self, a: &Self::Value, valid: &[bool]) -> Result<Self::Value>;
    fn slice_rows(&mut self, a: &Self::Value, start: usize, len: usize) -> Result<Self::Value>;
    fn slice_cols(&mut self, a: &Self::Value, start: usize, len: usize) -> Result<Self::Value>;
    fn concat_rows(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn concat_cols(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn gather_rows(&mut self, a: &Self::Value, index: &[usize]) -> Result<Self::Value>;
    /// Mean CTC loss over the utterances of a batch-major `[B·T × V]` logit
    /// matrix. Blank is index 0.
    fn ctc_mean_loss(
        &mut self,
        logits: &Self::Value,
        frames: usize,
        lengths: &[usize],
        labels: &[&[usize]],
    ) -> Result<Self::Value>;

    /// `x·Wᵀ + b` applied to every row of `x`.
    fn linear(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value> {
        let xw = self.matmul_t(x, w)?;
        match b {
            None => Ok(xw),
            Some(b) => {
                let rows = self.value(&xw).rows();
                let bb = self.broadcast_rows(b, rows)?;
                self.add(&xw, &bb)
            }
        }
    }
}

/// Value-only execution: no tape, no gradients.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Scalar> Exec<T> for Eager {
    type Value = Tensor<T>;

    fn leaf(&mut self, t: &Tensor<T>) -> Tensor<T> {
        t.clone()
    }
    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }
    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }
    fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.matmul(b)
    }
    fn matmul_t(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.matmul_t(b)
    }
    fn transpose(&mut self, a: &Tensor<T>) -> Tensor<T> {
        a.transpose()
    }
    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }
    fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.sub(b)
    }
    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.mul(b)
    }
    fn scale(&mut self, a: &Tensor<T>, c: T) -> Tensor<T> {
        a.scale(c)
    }
    fn add_scalar(&mut self, a: &Tensor<T>, c: T) -> Tensor<T> {
        a.add_scalar(c)
    }
    fn sigmoid(&mut self, a: &Tensor<T>) -> Tensor<T> {
        a.sigmoid()
    }
    fn tanh(&mut self, a: &Tensor<T>) -> Tensor<T> {
        a.tanh()
    }
    fn exp(&mut self, a: &Tensor<T>) -> Tensor<T> {
        a.exp()
    }
    fn powf(&mut self, a: &Tensor<T>, p: T) -> Tensor<T> {
        a.powf(p)
    }
    fn broadcast_rows(&mut self, a: &Tensor<T>, rows: usize) -> Result<Tensor<T>> {
        a.broadcast_rows(rows)
    }
    fn broadcast_cols(&mut self, a: &Tensor<T>, cols: usize) -> Result<Tensor<T>> {
        a.broadcast_cols(cols)
    }
    fn sum_all(&mut self, a: &Tensor<T>) -> Tensor<T> {
        Tensor::scalar(a.sum())
    }
    fn sum_rows(&mut self, a: &Tensor<T>) -> Tensor<T> {
        a.sum_rows()
    }
    fn sum_cols(&mut self, a: &Tensor<T>) -> Tensor<T> {
        a.sum_cols()
    }
    fn masked_softmax_rows(&mut self, a: &Tensor<T>, valid: &[bool]) -> Result<Tensor<T>> {
        a.masked_softmax_rows(valid)
    }
    fn slice_rows(&mut self, a: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
        a.slice_rows(start, len)
    }
    fn slice_cols(&mut self, a: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
        a.slice_cols(start, len)
    }
    fn concat_rows(&mut self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
    }
    fn concat_cols(&mut self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        Tensor::concat_cols(&parts.iter().collect::<Vec<_>>())
    }
    fn gather_rows(&mut self, a: &Tensor<T>, index: &[usize]) -> Result<Tensor<T>> {
        a.gather_rows(index)
    }
    fn ctc_mean_loss(
        &mut self,
        logits: &Tensor<T>,
        frames: usize,
        lengths: &[usize],
        labels: &[&[usize]],
    ) -> Result<Tensor<T>> {
        let (loss, _) = ctc::ctc_batch_mean(logits, frames, lengths, labels, false)?;
        Ok(Tensor::scalar(loss))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Const,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Powf(usize, T),
    BroadcastRows(usize),
    BroadcastCols(usize),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    MaskedSoftmax(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    /// Saved gradient of the loss with respect to the logits.
    Ctc(usize, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording executor. Nodes are appended in execution order, which is a
/// topological order of the computation graph.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Const => false,
            _ => op_inputs(&op).iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Propagates gradients from a scalar `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let v = |i: usize| &self.nodes[i].value;
        let mut acc = |i: usize, d: Tensor<T>| -> Result<()> {
            if !self.nodes[i].requires_grad {
                return Ok(());
            }
            let target_shape = self.nodes[i].value.shape();
            let d = if d.shape() == target_shape {
                d
            } else {
                d.reshape(target_shape)?
            };
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => {
                    *slot = Some(d);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(v(*b))?)?;
                acc(*b, v(*a).t_matmul(g)?)?;
            }
            Op::MatMulT(a, b) => {
                acc(*a, g.matmul(v(*b))?)?;
                acc(*b, g.t_matmul(v(*a))?)?;
            }
            Op::Transpose(a) => acc(*a, g.transpose())?,
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(v(*b))?)?;
                acc(*b, g.mul(v(*a))?)?;
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c))?,
            Op::AddScalar(a) => acc(*a, g.clone())?,
            Op::Sigmoid(a) => {
                let d = node
                    .value
                    .zip_with(g, "sigmoid'", |y, g| g * y * (T::one() - y))?;
                acc(*a, d)?;
            }
            Op::Tanh(a) => {
                let d = node.value.zip_with(g, "tanh'", |y, g| g * (T::one() - y * y))?;
                acc(*a, d)?;
            }
            Op::Exp(a) => acc(*a, node.value.mul(g)?)?,
            Op::Powf(a, p) => {
                let p = *p;
                let d = v(*a).zip_with(g, "powf'", |x, g| g * p * x.powf(p - T::one()))?;
                acc(*a, d)?;
            }
            Op::BroadcastRows(a) => acc(*a, g.sum_rows())?,
            Op::BroadcastCols(a) => acc(*a, g.sum_cols())?,
            Op::SumAll(a) => acc(*a, Tensor::full(v(*a).shape(), g.data()[0]))?,
            Op::SumRows(a) => acc(*a, g.broadcast_rows(v(*a).rows())?)?,
            Op::SumCols(a) => acc(*a, g.broadcast_cols(v(*a).cols())?)?,
            Op::MaskedSoftmax(a) => {
                // dx = y ⊙ (g − Σ_j g_j y_j), row-wise; masked y are zero.
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        d[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::new(y.shape().to_vec(), d)?)?;
            }
            Op::SliceRows(a, start) => {
                let src = v(*a);
                let mut d = Tensor::zeros(&[src.rows(), src.cols()]);
                let c = src.cols();
                d.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                acc(*a, d)?;
            }
            Op::SliceCols(a, start) => {
                let src = v(*a);
                let (r, c) = src.dims2();
                let len = g.cols();
                let mut d = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    d.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                acc(*a, d)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = v(p).rows();
                    acc(p, g.slice_rows(offset, rows)?)?;
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = v(p).cols();
                    acc(p, g.slice_cols(offset, cols)?)?;
                    offset += cols;
                }
            }
            Op::GatherRows(a, index) => {
                let src = v(*a);
                let (r, c) = src.dims2();
                let mut d = vec![T::zero(); r * c];
                for (k, &i) in index.iter().enumerate() {
                    for (o, &x) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                acc(*a, Tensor::new(vec![r, c], d)?)?;
            }
            Op::Ctc(a, saved) => acc(*a, saved.scale(g.data()[0]))?,
        }
        Ok(())
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<usize> {
    match op {
        Op::Leaf | Op::Const => vec![],
        Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Powf(a, _)
        | Op::BroadcastRows(a)
        | Op::BroadcastCols(a)
        | Op::SumAll(a)
        | Op::SumRows(a)
        | Op::SumCols(a)
        | Op::MaskedSoftmax(a)
        | Op::SliceRows(a, _)
        | Op::SliceCols(a, _)
        | Op::GatherRows(a, _)
        | Op::Ctc(a, _) => vec![*a],
        Op::ConcatRows(p) | Op::ConcatCols(p) => p.clone(),
    }
}

impl<T: Scalar> Exec<T> for Tape<T> {
    type Value = Var;

    fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.clone(), Op::Leaf)
    }
    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Const)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).matmul(self.val(*b))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }
    fn matmul_t(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).matmul_t(self.val(*b))?;
        Ok(self.push(out, Op::MatMulT(a.0, b.0)))
    }
    fn transpose(&mut self, a: &Var) -> Var {
        let out = self.val(*a).transpose();
        self.push(out, Op::Transpose(a.0))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).add(self.val(*b))?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).sub(self.val(*b))?;
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.val(*a).mul(self.val(*b))?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }
    fn scale(&mut self, a: &Var, c: T) -> Var {
        let out = self.val(*a).scale(c);
        self.push(out, Op::Scale(a.0, c))
    }
    fn add_scalar(&mut self, a: &Var, c: T) -> Var {
        let out = self.val(*a).add_scalar(c);
        self.push(out, Op::AddScalar(a.0))
    }
    fn sigmoid(&mut self, a: &Var) -> Var {
        let out = self.val(*a).sigmoid();
        self.push(out, Op::Sigmoid(a.0))
    }
    fn tanh(&mut self, a: &Var) -> Var {
        let out = self.val(*a).tanh();
        self.push(out, Op::Tanh(a.0))
    }
    fn exp(&mut self, a: &Var) -> Var {
        let out = self.val(*a).exp();
        self.push(out, Op::Exp(a.0))
    }
    fn powf(&mut self, a: &Var, p: T) -> Var {
        let out = self.val(*a).powf(p);
        self.push(out, Op::Powf(a.0, p))
    }
    fn broadcast_rows(&mut self, a: &Var, rows: usize) -> Result<Var> {
        let out = self.val(*a).broadcast_rows(rows)?;
        Ok(self.push(out, Op::BroadcastRows(a.0)))
    }
    fn broadcast_cols(&mut self, a: &Var, cols: usize) -> Result<Var> {
        let out = self.val(*a).broadcast_cols(cols)?;
        Ok(self.push(out, Op::BroadcastCols(a.0)))
    }
    fn sum_all(&mut self, a: &Var) -> Var {
        let out = Tensor::scalar(self.val(*a).sum());
        self.push(out, Op::SumAll(a.0))
    }
    fn sum_rows(&mut self, a: &Var) -> Var {
        let out = self.val(*a).sum_rows();
        self.push(out, Op::SumRows(a.0))
    }
    fn sum_cols(&mut self, a: &Var) -> Var {
        let out = self.val(*a).sum_cols();
        self.push(out, Op::SumCols(a.0))
    }
    fn masked_softmax_rows(&mut self, a: &Var, valid: &[bool]) -> Result<Var> {
        let out = self.val(*a).masked_softmax_rows(valid)?;
        Ok(self.push(out, Op::MaskedSoftmax(a.0)))
    }
    fn slice_rows(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let out = self.val(*a).slice_rows(start, len)?;
        Ok(self.push(out, Op::SliceRows(a.0, start)))
    }
    fn slice_cols(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let out = self.val(*a).slice_cols(start, len)?;
        Ok(self.push(out, Op::SliceCols(a.0, start)))
    }
    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let out = Tensor::concat_rows(&parts.iter().map(|p| self.val(*p)).collect::<Vec<_>>())?;
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }
    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let out = Tensor::concat_cols(&parts.iter().map(|p| self.val(*p)).collect::<Vec<_>>())?;
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }
    fn gather_rows(&mut self, a: &Var, index: &[usize]) -> Result<Var> {
        let out = self.val(*a).gather_rows(index)?;
        Ok(self.push(out, Op::GatherRows(a.0, index.to_vec())))
    }
    fn ctc_mean_loss(&mut self, logits: &Var, frames: usize, lengths: &[usize], labels: &[&[usize]]) -> Result<Var> {
        let (loss, grad) = ctc::ctc_batch_mean(self.val(*logits), frames, lengths, labels, true)?;
        let grad = grad.expect("gradient requested");
        Ok(self.push(Tensor::scalar(loss), Op::Ctc(logits.0, grad)))
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`, shaped like its value. Nodes the loss
    /// does not depend on get zeros.
    pub fn wrt(&self, tape: &Tape<T>, var: Var) -> Tensor<T> {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.val(var).shape()),
        }
    }
}
