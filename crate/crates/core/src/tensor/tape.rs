use super::kernels;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Elementwise nonlinearities. Kinks take subgradient 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pointwise {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    /// `relu(scale * x) + bias`
    ScaleAdd { scale: f64, bias: f64 },
    /// `max(-x, 0)`
    MaxZeroNeg,
}

/// Backward rule for an op defined outside this module.
///
/// Receives the forward inputs, the forward output and the upstream gradient and
/// returns one optional gradient per input.
pub type CustomBackward<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Option<Tensor<T>>> + Send + Sync>;

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize },
    Resize { input: Var },
    Pointwise { input: Var, kind: Pointwise },
    Concat { inputs: Vec<Var> },
    Slice { input: Var, start: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    WeightedSum { terms: Vec<(Var, Vec<T>)> },
    Sum { input: Var },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Record of executed operations for reverse-mode differentiation.
///
/// Nodes are appended after their inputs, so the node order is already a
/// topological order; [`Tape::backward`] walks it in reverse and visits every
/// node once. A tape belongs to one training thread.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, false, Op::Leaf)
    }

    /// Leaf that accumulates a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn push_raw(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, requires_grad, op)
    }

    /// Records an op whose backward rule is supplied by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        self.push(value, inputs, Op::Custom { inputs: inputs.to_vec(), backward })
    }

    /// Reverse pass from a scalar output. Gradients accumulate across fan-out.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        self.backward_with(output, Tensor::full(out.shape(), T::one()))
    }

    /// Reverse pass seeded with an explicit upstream gradient.
    pub fn backward_with(&mut self, output: Var, seed: Tensor<T>) -> Result<()> {
        if seed.shape() != self.nodes[output.0].value.shape() {
            return Err(Error::shape("backward seed", seed.shape(), self.nodes[output.0].value.shape()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            let contributions = self.input_grads(idx, &g)?;
            for (var, grad) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut self.grads[var.0] {
                    Some(acc) => acc.add_assign(&grad)?,
                    slot @ None => *slot = Some(grad),
                }
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, stride, padding } => {
                let (gi, gk, gb) = kernels::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    g,
                    *stride,
                    *padding,
                    needs(*input),
                )?;
                if let Some(gi) = gi {
                    out.push((*input, gi));
                }
                out.push((*kernel, gk));
                if let Some(b) = bias {
                    out.push((*b, gb));
                }
            }
            Op::Resize { input } => {
                let (_, h, w) = val(*input).chw()?;
                out.push((*input, kernels::resize_backward(g, h, w)?));
            }
            Op::Pointwise { input, kind } => {
                out.push((*input, kernels::pointwise_backward(val(*input), &node.value, g, *kind)));
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for v in inputs {
                    let shape = val(*v).shape();
                    let n = val(*v).len();
                    let part = Tensor::new(shape, g.data()[offset..offset + n].to_vec())?;
                    offset += n;
                    out.push((*v, part));
                }
            }
            Op::Slice { input, start } => {
                let src = val(*input);
                let plane: usize = src.shape()[1..].iter().product();
                let mut gi = Tensor::zeros(src.shape());
                let begin = start * plane;
                gi.data_mut()[begin..begin + g.len()].copy_from_slice(g.data());
                out.push((*input, gi));
            }
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul { a, b } => {
                let ga = Tensor::new(
                    g.shape(),
                    g.data().iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect(),
                )?;
                let gb = Tensor::new(
                    g.shape(),
                    g.data().iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect(),
                )?;
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::WeightedSum { terms } => {
                for (v, weights) in terms {
                    out.push((*v, kernels::scale_leading(g, weights)));
                }
            }
            Op::Sum { input } => {
                out.push((*input, Tensor::full(val(*input).shape(), g.data()[0])));
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| val(*v)).collect();
                let grads = backward(&ins, &node.value, g);
                for (v, gi) in inputs.iter().zip(grads) {
                    if let Some(gi) = gi {
                        if gi.shape() != val(*v).shape() {
                            return Err(Error::shape("custom backward", gi.shape(), val(*v).shape()));
                        }
                        out.push((*v, gi));
                    }
                }
            }
        }
        Ok(out)
    }
}
