//! Dense `f64` tensors with a reverse-mode autodiff tape.
//!
//! A [`Tensor`] is an immutable value plus a gradient accumulator. Every
//! operation that touches a tensor with `requires_grad` records the parents
//! and whatever forward context its backward rule needs; everything else is
//! created as a plain constant and carries no graph.
//!
//! Spatial tensors are laid out `[C, H, W]`, row-major. There is no general
//! broadcasting: binary elementwise ops require identical shapes and the one
//! broadcast the model needs is [`Tensor::broadcast_spatial`].

mod conv;
mod gradcheck;
mod linalg;
mod ops;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use gradcheck::grad_check;
pub use ops::{Elementwise, PoolMode, ReduceMode};

pub(crate) use linalg::gemm;

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

/// Graph record for a non-leaf tensor. Parents are owned so the graph stays
/// alive for as long as its output does.
pub(crate) enum Op {
    Leaf,
    Unary {
        input: Tensor,
        kind: ops::UnaryKind,
    },
    Binary {
        lhs: Tensor,
        rhs: Tensor,
        kind: ops::BinaryKind,
    },
    Scale {
        input: Tensor,
        factor: f64,
    },
    Shift {
        input: Tensor,
    },
    Conv2d(Box<conv::Conv2dCtx>),
    ConvTiled {
        input: Tensor,
        kernel: Tensor,
        height: usize,
        width: usize,
        padding: usize,
    },
    Pool2d {
        input: Tensor,
        window: usize,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Tensor,
        factor: usize,
    },
    Concat {
        inputs: Vec<Tensor>,
    },
    Slice {
        input: Tensor,
        start: usize,
    },
    Broadcast {
        input: Tensor,
    },
    Reduce {
        input: Tensor,
        mode: ReduceMode,
    },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Unary { input, .. }
            | Op::Scale { input, .. }
            | Op::Shift { input }
            | Op::Pool2d { input, .. }
            | Op::Upsample { input, .. }
            | Op::Slice { input, .. }
            | Op::Broadcast { input }
            | Op::Reduce { input, .. } => vec![input],
            Op::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            Op::ConvTiled { input, kernel, .. } => vec![input, kernel],
            Op::Conv2d(ctx) => vec![&ctx.input, &ctx.kernel, &ctx.bias],
            Op::Concat { inputs } => inputs.iter().collect(),
        }
    }

    fn requires_grad(&self) -> bool {
        self.parents().iter().any(|p| p.requires_grad())
    }
}

type NodeKey = *const Node;

/// Gradients in flight during one backward pass, keyed by node identity.
pub(crate) struct GradMap {
    grads: HashMap<NodeKey, Vec<f64>>,
}

impl GradMap {
    /// Adds `contribution` to the pending gradient of `target`. Targets that
    /// do not require a gradient are skipped.
    pub(crate) fn accumulate(&mut self, target: &Tensor, contribution: Vec<f64>) {
        if !target.requires_grad() {
            return;
        }
        debug_assert_eq!(contribution.len(), target.numel());
        match self.grads.get_mut(&target.key()) {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contribution) {
                    *e += c;
                }
            }
            None => {
                self.grads.insert(target.key(), contribution);
            }
        }
    }

    pub(crate) fn accumulate_with(&mut self, target: &Tensor, f: impl FnOnce(&mut [f64])) {
        if !target.requires_grad() {
            return;
        }
        let entry = self
            .grads
            .entry(target.key())
            .or_insert_with(|| vec![0.0; target.numel()]);
        f(entry);
    }
}

impl Tensor {
    fn from_node(node: Node) -> Self {
        Tensor(Rc::new(node))
    }

    /// Builds the output of an operation. The graph record is kept only when
    /// some parent takes part in differentiation.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = op.requires_grad();
        Self::from_node(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: if requires_grad { op } else { Op::Leaf },
        })
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(
                "tensor",
                format!("shape must be a non-empty list of positive sizes, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {shape:?} holds {numel} values but {} were given",
                    data.len()
                ),
            ));
        }
        Ok(Self::from_node(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: Op::Leaf,
        }))
    }

    /// A constant tensor that takes no part in differentiation.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.into(), data, false)
    }

    /// A trainable leaf: gradients accumulate into it on every backward pass.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.into(), data, true)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![1], vec![value], false).expect("scalar shape is valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::invalid(
                "item",
                format!("tensor of shape {:?} is not a scalar", self.shape()),
            ));
        }
        Ok(self.0.data[0])
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::from_node(Node {
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: false,
            grad: RefCell::new(None),
            op: Op::Leaf,
        })
    }

    /// Spatial dims of a `[C, H, W]` tensor.
    pub(crate) fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::invalid(
                op,
                format!("expected a [C, H, W] tensor, got shape {:?}", self.shape()),
            )),
        }
    }

    fn key(&self) -> NodeKey {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients are added to the
    /// accumulators of every tensor on a differentiable path to `self`;
    /// call [`Tensor::zero_grad`] between passes to reset them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending = GradMap {
            grads: HashMap::with_capacity(order.len()),
        };
        pending.grads.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.grads.remove(&node.key()) else {
                continue;
            };
            node.backprop(&g, &mut pending);
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Differentiable nodes reachable from `self`, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for parent in node.0.op.parents() {
                if parent.requires_grad() && !visited.contains(&parent.key()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
        order
    }

    fn backprop(&self, g: &[f64], acc: &mut GradMap) {
        match &self.0.op {
            Op::Leaf => {}
            Op::Unary { input, kind } => ops::unary_backward(*kind, input, self, g, acc),
            Op::Binary { lhs, rhs, kind } => ops::binary_backward(*kind, lhs, rhs, self, g, acc),
            Op::Scale { input, factor } => {
                acc.accumulate(input, g.iter().map(|v| v * factor).collect())
            }
            Op::Shift { input } => acc.accumulate(input, g.to_vec()),
            Op::Conv2d(ctx) => conv::conv2d_backward(ctx, g, acc),
            Op::ConvTiled {
                input,
                kernel,
                height,
                width,
                padding,
            } => conv::conv_tiled_backward(input, kernel, (*height, *width, *padding), g, acc),
            Op::Pool2d {
                input,
                window,
                mode,
                argmax,
            } => conv::pool2d_backward(input, *window, *mode, argmax, g, acc),
            Op::Upsample { input, factor } => conv::upsample_backward(input, *factor, g, acc),
            Op::Concat { inputs } => ops::concat_backward(inputs, g, acc),
            Op::Slice { input, start } => ops::slice_backward(input, *start, self, g, acc),
            Op::Broadcast { input } => ops::broadcast_backward(input, g, acc),
            Op::Reduce { input, mode } => ops::reduce_backward(input, *mode, g, acc),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
