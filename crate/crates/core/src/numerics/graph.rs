//! Tape-based reverse-mode differentiation.
//!
//! Operations evaluate eagerly and append a node to the tape. Node `k` only
//! references nodes `< k`, so the tape is already in topological order and
//! [`Graph::backward`] is a single reverse sweep.

use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

use super::attention::{attention, attention_backward, AttentionMask};
use super::ops;
use super::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var },
    Attention { q: Var, k: Var, v: Var, mask: Arc<AttentionMask>, heads: usize },
    Gather { table: Var, indices: Arc<[usize]> },
    CrossEntropy { logits: Var, targets: Arc<[Option<usize>]>, n_classes: usize },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
}

/// Recording of primitive operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`]. Only leaf
/// nodes created with [`Graph::input`] keep their gradient.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`; `None` when the loss does
    /// not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Registers a leaf tensor (parameter or data).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Input, value)
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Broadcast-adds vector `bias` to every row of matrix `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = ops::add_row(self.value(a), self.value(bias))?;
        Ok(self.push(Op::AddRow(a, bias), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let out = self.value(a).map(|v| v * f);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = ops::gelu(self.value(a));
        self.push(Op::Gelu(a), out)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = ops::softmax(x, x.ndim() - 1)?;
        Ok(self.push(Op::Softmax(a), out))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let out = ops::layer_norm(self.value(x), self.value(gain), self.value(bias), ops::LAYER_NORM_EPS)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias }, out))
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Arc<AttentionMask>, heads: usize) -> Result<Var> {
        let out = attention(self.value(q), self.value(k), self.value(v), &mask, heads)?;
        Ok(self.push(Op::Attention { q, k, v, mask, heads }, out))
    }

    /// Embedding lookup: rows of `table` selected by `indices`.
    pub fn gather(&mut self, table: Var, indices: impl Into<Arc<[usize]>>) -> Result<Var> {
        let indices = indices.into();
        let out = ops::gather(self.value(table), &indices)?;
        Ok(self.push(Op::Gather { table, indices }, out))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: impl Into<Arc<[Option<usize>]>>, n_classes: usize) -> Result<Var> {
        let targets = targets.into();
        let loss = ops::cross_entropy(self.value(logits), &targets, n_classes)?;
        Ok(self.push(Op::CrossEntropy { logits, targets, n_classes }, Tensor::scalar(loss)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.sum() / T::of(x.numel() as f64);
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), out))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidInput(format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let mut send = |var: Var, g: Tensor<T>| -> Result<()> {
                debug_assert!(var.0 < idx, "tape must be topologically ordered");
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => {
                        *slot = Some(g);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Input => unreachable!(),
                Op::MatMul(a, b) => {
                    let (ga, gb) = ops::matmul_backward(self.value(*a), self.value(*b), &grad);
                    send(*a, ga)?;
                    send(*b, gb)?;
                }
                Op::Add(a, b) => {
                    send(*a, grad.clone())?;
                    send(*b, grad.clone())?;
                }
                Op::AddRow(a, bias) => {
                    send(*bias, ops::column_sums(&grad, self.value(*bias).shape()))?;
                    send(*a, grad.clone())?;
                }
                Op::Mul(a, b) => {
                    send(*a, ops::mul(&grad, self.value(*b))?)?;
                    send(*b, ops::mul(&grad, self.value(*a))?)?;
                }
                Op::Scale(a, f) => {
                    let f = T::of(*f);
                    send(*a, grad.map(|v| v * f))?;
                }
                Op::Gelu(a) => send(*a, ops::gelu_backward(self.value(*a), &grad))?,
                Op::Softmax(a) => send(*a, ops::softmax_last_backward(&node.value, &grad))?,
                Op::LayerNorm { x, gain, bias } => {
                    let (gx, gg, gb) = ops::layer_norm_backward(self.value(*x), self.value(*gain), &grad, ops::LAYER_NORM_EPS);
                    send(*x, gx)?;
                    send(*gain, gg)?;
                    send(*bias, gb)?;
                }
                Op::Attention { q, k, v, mask, heads } => {
                    let (gq, gk, gv) = attention_backward(self.value(*q), self.value(*k), self.value(*v), mask, *heads, &grad)?;
                    send(*q, gq)?;
                    send(*k, gk)?;
                    send(*v, gv)?;
                }
                Op::Gather { table, indices } => {
                    send(*table, ops::gather_backward(self.value(*table).shape(), indices, &grad))?;
                }
                Op::CrossEntropy { logits, targets, n_classes } => {
                    let g = ops::cross_entropy_backward(self.value(*logits), targets, *n_classes, grad.data()[0]);
                    send(*logits, g)?;
                }
                Op::Sum(a) => {
                    send(*a, Tensor::full(self.value(*a).shape(), grad.data()[0]))?;
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    send(*a, Tensor::full(x.shape(), grad.data()[0] / T::of(x.numel() as f64)))?;
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    send(*a, grad.reshape(&shape)?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Convenience for building a loss from two same-shaped variables.
pub fn dot<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.value(a).shape() != g.value(b).shape() {
        return dim_err("dot of differently shaped tensors");
    }
    let p = g.mul(a, b)?;
    Ok(g.sum(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn self_dot_gradient_is_twice_input() {
        let mut g = Graph::new();
        let vals = [1.5, -2.0, 0.25];
        let x = g.input(t(&[3], &vals));
        let loss = dot(&mut g, x, x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unused_inputs_have_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(t(&[1], &[1.0]));
        let y = g.input(t(&[1], &[2.0]));
        let loss = g.mean(x);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(y).is_none());
    }
}
