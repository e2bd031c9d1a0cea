//! Tape-based reverse-mode differentiation.
//!
//! A [`GradientTape`] records every operation executed through it, together
//! with the intermediates its backward rule needs. [`GradientTape::backward`]
//! then walks the record in exact reverse order, accumulating gradients, so
//! a value consumed by several operations receives the sum of their
//! contributions.
//!
//! ```
//! use prednet_core::tape::GradientTape;
//! use prednet_core::tensor::Tensor;
//!
//! let mut tape = GradientTape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
//! let twice = tape.add(x, x).unwrap();
//! let loss = tape.sum(twice);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
//! ```
//!
//! A tape has a single writer. Build one tape per forward pass; independent
//! passes may run on separate threads with their own tapes.

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeom, Tensor};

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    GlobalMaxPool { input: Var, argmax: Vec<usize> },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Linear { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Sum(Var),
    Mean(Var),
    SoftmaxCrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`GradientTape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when `var` does not
    /// require gradients or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input value. Gradients are only accumulated into leaves
    /// created with `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let geom = ConvGeom::check(self.value(input), self.value(kernel), self.value(bias))?;
        let out = tensor::conv2d_unchecked(
            geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = tensor::global_max_pool_with_argmax(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::GlobalMaxPool { input, argmax }, rg))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = tensor::max_pool2_with_argmax(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = tensor::linear(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    fn unary(&mut self, x: Var, f: fn(&Tensor) -> Tensor, op: Op) -> Var {
        let out = f(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, tensor::relu, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, tensor::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, tensor::tanh, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, tensor::abs, Op::Abs(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::sub(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::hadamard(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = tensor::channel_concat(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start+len` of the leading axis.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(input);
        let c = src.shape()[0];
        if len == 0 || start + len > c {
            return Err(Error::Config(format!(
                "slice {start}..{} out of range for leading dim {c}",
                start + len
            )));
        }
        let inner: usize = src.shape()[1..].iter().product();
        let mut shape = src.shape().to_vec();
        shape[0] = len;
        let out = Tensor::new(shape, src.data()[start * inner..(start + len) * inner].to_vec())?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Slice { input, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// Mean of equally-shaped values, recorded as a sum followed by a scale.
    pub fn average(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Usage("average of an empty list".into()))?;
        let mut acc = first;
        for &p in rest {
            acc = self.add(acc, p)?;
        }
        Ok(self.scale(acc, 1.0 / parts.len() as f64))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let l = self.value(logits);
        let loss = tensor::softmax_cross_entropy(l, label)?;
        let probs = tensor::softmax(l.data());
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    /// Reverse traversal from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Usage(format!("loss {loss:?} is not on this tape")))?;
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let mut gi = self.take_buf(*input, grads);
                let mut gk = self.take_buf(*kernel, grads);
                let mut gb = self.take_buf(*bias, grads);
                tensor::conv2d_backward(
                    *geom,
                    x.data(),
                    k.data(),
                    gd,
                    gi.as_mut().map(|t| t.data_mut()),
                    gk.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                self.put_buf(*input, gi, grads);
                self.put_buf(*kernel, gk, grads);
                self.put_buf(*bias, gb, grads);
            }
            Op::GlobalMaxPool { input, argmax } | Op::MaxPool2 { input, argmax } => {
                self.accumulate(*input, grads, |acc| {
                    for (&pos, v) in argmax.iter().zip(gd) {
                        acc[pos] += v;
                    }
                });
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let d = x.len();
                self.accumulate(*input, grads, |acc| {
                    for (r, gv) in gd.iter().enumerate() {
                        let row = &w[r * d..(r + 1) * d];
                        for (a, wv) in acc.iter_mut().zip(row) {
                            *a += gv * wv;
                        }
                    }
                });
                self.accumulate(*weight, grads, |acc| {
                    for (r, gv) in gd.iter().enumerate() {
                        for (a, xv) in acc[r * d..(r + 1) * d].iter_mut().zip(x) {
                            *a += gv * xv;
                        }
                    }
                });
                self.accumulate(*bias, grads, |acc| {
                    for (a, v) in acc.iter_mut().zip(gd) {
                        *a += v;
                    }
                });
            }
            Op::Relu(x) => {
                let y = node.value.data();
                self.accumulate(*x, grads, |acc| {
                    for ((a, v), yv) in acc.iter_mut().zip(gd).zip(y) {
                        if *yv > 0.0 {
                            *a += v;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate(*x, grads, |acc| {
                    for ((a, v), yv) in acc.iter_mut().zip(gd).zip(y) {
                        *a += v * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accumulate(*x, grads, |acc| {
                    for ((a, v), yv) in acc.iter_mut().zip(gd).zip(y) {
                        *a += v * (1.0 - yv * yv);
                    }
                });
            }
            Op::Abs(x) => {
                let xs = self.value(*x).data();
                self.accumulate(*x, grads, |acc| {
                    for ((a, v), xv) in acc.iter_mut().zip(gd).zip(xs) {
                        if *xv > 0.0 {
                            *a += v;
                        } else if *xv < 0.0 {
                            *a -= v;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for &(var, sign) in &[(*a, 1.0), (*b, 1.0)] {
                    self.accumulate(var, grads, |acc| axpy(acc, sign, gd));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, grads, |acc| axpy(acc, 1.0, gd));
                self.accumulate(*b, grads, |acc| axpy(acc, -1.0, gd));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(*a, grads, |acc| {
                    for ((s, v), o) in acc.iter_mut().zip(gd).zip(bv) {
                        *s += v * o;
                    }
                });
                self.accumulate(*b, grads, |acc| {
                    for ((s, v), o) in acc.iter_mut().zip(gd).zip(av) {
                        *s += v * o;
                    }
                });
            }
            Op::Scale(x, f) => self.accumulate(*x, grads, |acc| axpy(acc, *f, gd)),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let piece = &gd[offset..offset + n];
                    self.accumulate(p, grads, |acc| axpy(acc, 1.0, piece));
                    offset += n;
                }
            }
            Op::Slice { input, start } => {
                let inner: usize = g.shape()[1..].iter().product();
                let off = start * inner;
                self.accumulate(*input, grads, |acc| {
                    axpy(&mut acc[off..off + gd.len()], 1.0, gd)
                });
            }
            Op::Sum(x) => {
                let s = gd[0];
                self.accumulate(*x, grads, |acc| acc.iter_mut().for_each(|a| *a += s));
            }
            Op::Mean(x) => {
                let s = gd[0] / self.value(*x).len() as f64;
                self.accumulate(*x, grads, |acc| acc.iter_mut().for_each(|a| *a += s));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let s = gd[0];
                self.accumulate(*logits, grads, |acc| {
                    for (i, (a, p)) in acc.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *label { 1.0 } else { 0.0 };
                        *a += s * (p - onehot);
                    }
                });
            }
        }
    }

    fn accumulate(&self, var: Var, grads: &mut [Option<Tensor>], f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        f(slot.data_mut());
    }

    fn take_buf(&self, var: Var, grads: &mut [Option<Tensor>]) -> Option<Tensor> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            grads[var.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
        )
    }

    fn put_buf(&self, var: Var, buf: Option<Tensor>, grads: &mut [Option<Tensor>]) {
        if let Some(b) = buf {
            grads[var.0] = Some(b);
        }
    }
}

fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}
