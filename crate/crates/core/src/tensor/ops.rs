use super::{GradMap, Op, Tensor};
use crate::error::{Error, Result};

/// Elementwise operations. Binary variants need a second operand of the
/// same shape; `Scale` multiplies by a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Sigmoid,
    Tanh,
    Relu,
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    /// Dispatches one of the [`Elementwise`] ops. Binary ops require `rhs`
    /// with exactly the same shape as `self`.
    pub fn elementwise(&self, op: Elementwise, rhs: Option<&Tensor>) -> Result<Tensor> {
        let binary = |kind| {
            let rhs = rhs.ok_or_else(|| {
                Error::invalid("elementwise", format!("{op:?} needs a second operand"))
            })?;
            self.binary(rhs, kind)
        };
        match op {
            Elementwise::Add => binary(BinaryKind::Add),
            Elementwise::Sub => binary(BinaryKind::Sub),
            Elementwise::Mul => binary(BinaryKind::Mul),
            Elementwise::Div => binary(BinaryKind::Div),
            Elementwise::Sigmoid => Ok(self.sigmoid()),
            Elementwise::Tanh => Ok(self.tanh()),
            Elementwise::Relu => Ok(self.relu()),
            Elementwise::Scale(factor) => Ok(self.scale(factor)),
        }
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Mul)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Div)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(UnaryKind::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(UnaryKind::Relu)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Scale {
                input: self.clone(),
                factor,
            },
        )
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, offset: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + offset).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Shift {
                input: self.clone(),
            },
        )
    }

    fn unary(&self, kind: UnaryKind) -> Tensor {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Relu => |x| x.max(0.0),
        };
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Unary {
                input: self.clone(),
                kind,
            },
        )
    }

    fn binary(&self, rhs: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Mul => "mul",
                    BinaryKind::Div => "div",
                },
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |a, b| a + b,
            BinaryKind::Sub => |a, b| a - b,
            BinaryKind::Mul => |a, b| a * b,
            BinaryKind::Div => |a, b| a / b,
        };
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Binary {
                lhs: self.clone(),
                rhs: rhs.clone(),
                kind,
            },
        ))
    }

    /// Stacks `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(tensors: &[Tensor]) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no tensors given"))?;
        let (_, h, w) = first.chw("concat_channels")?;
        let mut channels = 0;
        for t in tensors {
            let (c, th, tw) = t.chw("concat_channels")?;
            if (th, tw) != (h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for t in tensors {
            data.extend_from_slice(t.data());
        }
        Ok(Tensor::from_op(
            vec![channels, h, w],
            data,
            Op::Concat {
                inputs: tensors.to_vec(),
            },
        ))
    }

    /// Channels `start..start + len` of a `[C, H, W]` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::invalid(
                "slice_channels",
                format!("range {start}..{} out of {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let data = self.data()[start * plane..(start + len) * plane].to_vec();
        Ok(Tensor::from_op(
            vec![len, h, w],
            data,
            Op::Slice {
                input: self.clone(),
                start,
            },
        ))
    }

    /// Tiles a `[D]` vector into a `[D, H, W]` map: every pixel gets the
    /// whole vector.
    pub fn broadcast_spatial(&self, h: usize, w: usize) -> Result<Tensor> {
        let [d] = *self.shape() else {
            return Err(Error::invalid(
                "broadcast_spatial",
                format!("expected a [D] vector, got shape {:?}", self.shape()),
            ));
        };
        if h == 0 || w == 0 {
            return Err(Error::invalid(
                "broadcast_spatial",
                "spatial size must be positive",
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(d * plane);
        for &v in self.data() {
            data.extend(std::iter::repeat_n(v, plane));
        }
        Ok(Tensor::from_op(
            vec![d, h, w],
            data,
            Op::Broadcast {
                input: self.clone(),
            },
        ))
    }

    /// Sum or mean over all elements, as a `[1]` tensor.
    pub fn reduce(&self, mode: ReduceMode) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let value = match mode {
            ReduceMode::Sum => total,
            ReduceMode::Mean => total / self.numel() as f64,
        };
        Tensor::from_op(
            vec![1],
            vec![value],
            Op::Reduce {
                input: self.clone(),
                mode,
            },
        )
    }

    pub fn sum(&self) -> Tensor {
        self.reduce(ReduceMode::Sum)
    }

    pub fn mean(&self) -> Tensor {
        self.reduce(ReduceMode::Mean)
    }
}

pub(super) fn unary_backward(
    kind: UnaryKind,
    input: &Tensor,
    out: &Tensor,
    g: &[f64],
    acc: &mut GradMap,
) {
    let grad: Vec<f64> = match kind {
        UnaryKind::Sigmoid => out
            .data()
            .iter()
            .zip(g)
            .map(|(y, g)| g * y * (1.0 - y))
            .collect(),
        UnaryKind::Tanh => out
            .data()
            .iter()
            .zip(g)
            .map(|(y, g)| g * (1.0 - y * y))
            .collect(),
        UnaryKind::Relu => input
            .data()
            .iter()
            .zip(g)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    };
    acc.accumulate(input, grad);
}

pub(super) fn binary_backward(
    kind: BinaryKind,
    lhs: &Tensor,
    rhs: &Tensor,
    out: &Tensor,
    g: &[f64],
    acc: &mut GradMap,
) {
    match kind {
        BinaryKind::Add => {
            acc.accumulate(lhs, g.to_vec());
            acc.accumulate(rhs, g.to_vec());
        }
        BinaryKind::Sub => {
            acc.accumulate(lhs, g.to_vec());
            acc.accumulate(rhs, g.iter().map(|v| -v).collect());
        }
        BinaryKind::Mul => {
            if lhs.requires_grad() {
                acc.accumulate(lhs, g.iter().zip(rhs.data()).map(|(g, b)| g * b).collect());
            }
            if rhs.requires_grad() {
                acc.accumulate(rhs, g.iter().zip(lhs.data()).map(|(g, a)| g * a).collect());
            }
        }
        BinaryKind::Div => {
            if lhs.requires_grad() {
                acc.accumulate(lhs, g.iter().zip(rhs.data()).map(|(g, b)| g / b).collect());
            }
            if rhs.requires_grad() {
                // d(a/b)/db = -(a/b)/b
                let grad = g
                    .iter()
                    .zip(out.data())
                    .zip(rhs.data())
                    .map(|((g, q), b)| -g * q / b)
                    .collect();
                acc.accumulate(rhs, grad);
            }
        }
    }
}

pub(super) fn concat_backward(inputs: &[Tensor], g: &[f64], acc: &mut GradMap) {
    let mut offset = 0;
    for t in inputs {
        let n = t.numel();
        acc.accumulate(t, g[offset..offset + n].to_vec());
        offset += n;
    }
}

pub(super) fn slice_backward(
    input: &Tensor,
    start: usize,
    out: &Tensor,
    g: &[f64],
    acc: &mut GradMap,
) {
    let plane = out.shape()[1] * out.shape()[2];
    let begin = start * plane;
    acc.accumulate_with(input, |dst| {
        for (d, s) in dst[begin..begin + g.len()].iter_mut().zip(g) {
            *d += s;
        }
    });
}

pub(super) fn broadcast_backward(input: &Tensor, g: &[f64], acc: &mut GradMap) {
    let d = input.numel();
    let plane = g.len() / d;
    let grad = g.chunks_exact(plane).map(|c| c.iter().sum()).collect();
    acc.accumulate(input, grad);
}

pub(super) fn reduce_backward(input: &Tensor, mode: ReduceMode, g: &[f64], acc: &mut GradMap) {
    let n = input.numel();
    let v = match mode {
        ReduceMode::Sum => g[0],
        ReduceMode::Mean => g[0] / n as f64,
    };
    acc.accumulate(input, vec![v; n]);
}
