//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every forward operation in execution order. Values are
//! stored on the tape and referred to by [`Var`] handles, so inputs always
//! precede the nodes that consume them. [`Tape::backward`] walks the record
//! once in reverse and may only be called once per tape; build a fresh tape
//! for every training step.
//!
//! Only nodes downstream of a trainable leaf carry gradient, which keeps
//! frozen sub-graphs (a fixed encoder, constant inputs) out of the backward
//! pass entirely.

mod ops;
mod optim;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

pub use optim::{clip_global_norm, sgd_step, Adam, AdamConfig, MomentState};

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatVec { w: Var, x: Var, m: usize, k: usize },
    Transpose { a: Var, m: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast { a: Var, b: Var, n: usize },
    ScaleRows { a: Var, s: Var, n: usize },
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    MeanRows { a: Var, m: usize, n: usize },
    MaxPool2d { a: Var, argmax: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Var, cin: usize, h: usize, wd: usize, cout: usize },
    RowSelect { table: Var, row: usize, n: usize },
    Reshape(Var),
    Sum(Var),
    Bce { pred: Var, target: Vec<f64> },
    Mse(Var, Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Vec<f64>,
    pub(crate) shape: Vec<usize>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    named: BTreeMap<String, Var>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reachable and trainable.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies the value of `v` out as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape nodes are well-shaped")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("leaf", shape, &[data.len()]));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push_raw(data, shape.to_vec(), requires_grad, Op::Leaf))
    }

    /// Records a tensor as a constant input.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.shape(), t.data().to_vec(), false)
    }

    /// Records a tensor as a trainable input regardless of its own grad flag.
    pub fn variable(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.shape(), t.data().to_vec(), true)
    }

    /// Records a named input once per tape; later calls return the same handle.
    ///
    /// Trainability follows `t.requires_grad()`.
    pub fn named(&mut self, name: &str, t: &Tensor) -> Result<Var> {
        if let Some(&v) = self.named.get(name) {
            return Ok(v);
        }
        let v = self.leaf(t.shape(), t.data().to_vec(), t.requires_grad())?;
        self.named.insert(String::from(name), v);
        Ok(v)
    }

    /// Named inputs recorded on this tape, in name order.
    pub fn named_vars(&self) -> impl Iterator<Item = (&str, Var)> + '_ {
        self.named.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub(crate) fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, op_name: &'static str) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(op_name));
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, shape, requires_grad, op))
    }

    fn push_raw(&mut self, value: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d(loss)/d(node) to every trainable node reachable from `loss`.
    ///
    /// Consumes the tape: a second call returns [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = &self.nodes[loss.0].shape;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward", shape, &[1]));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            ops::backprop(&self.nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul { a, b, .. } => vec![*a, *b],
        Op::MatVec { w, x, .. } => vec![*w, *x],
        Op::Transpose { a, .. } => vec![*a],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
        Op::AddRowBroadcast { a, b, .. } => vec![*a, *b],
        Op::ScaleRows { a, s, .. } => vec![*a, *s],
        Op::Scale(a, _) | Op::Tanh(a) | Op::Sigmoid(a) | Op::Relu(a) | Op::Softmax(a) => vec![*a],
        Op::Concat(parts) => parts.clone(),
        Op::Slice { a, .. } | Op::MeanRows { a, .. } | Op::MaxPool2d { a, .. } => vec![*a],
        Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
        Op::RowSelect { table, .. } => vec![*table],
        Op::Reshape(a) | Op::Sum(a) => vec![*a],
        Op::Bce { pred, .. } => vec![*pred],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}
