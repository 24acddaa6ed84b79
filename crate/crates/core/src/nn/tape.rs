//! Reverse-mode tape.
//!
//! Every forward operation appends a node holding its output value. Since
//! nodes only reference earlier nodes, walking the tape backwards is a
//! reverse topological order. Trainable weights live in a [`ParamStore`]
//! outside the tape; [`Tape::param`] pulls a weight in, and
//! [`Tape::backward`] accumulates weight gradients back into the store.

use super::kernels;
use super::{Scalar, Tensor4};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter in its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor4<T>,
    pub grad: Option<Tensor4<T>>,
}

/// Ordered collection of parameters with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor4<T>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Usage(format!("duplicate parameter name {name:?}")));
        }
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Snapshot of all parameter values.
    pub fn values(&self) -> Vec<Tensor4<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Restores values captured by [`ParamStore::values`].
    pub fn set_values(&mut self, values: Vec<Tensor4<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} tensors for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(Tensor4::cast),
                })
                .collect(),
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2 { input: Var },
    Relu { input: Var },
    Concat { a: Var, b: Var },
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor4<T>,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient of an input leaf.
    grad: Option<Tensor4<T>>,
}

/// Recording of one forward pass.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(t: &Tensor4<T>, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
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

    fn push(&mut self, value: Tensor4<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant or a differentiable input leaf.
    pub fn input(&mut self, value: Tensor4<T>, requires_grad: bool) -> Result<Var> {
        check_finite(&value, "input")?;
        Ok(self.push(value, Op::Input, requires_grad))
    }

    /// Records a parameter leaf, copying its current value.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of an input leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor4<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Clears accumulated gradients of input leaves.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// 3x3 convolution, stride 1, zero padding 1, plus per-channel bias.
    /// `weight` is `(c_out, c_in, 3, 3)`, `bias` is `(c_out, 1, 1, 1)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        if ws[2] != 3 || ws[3] != 3 {
            return Err(Error::Shape(format!("conv2d expects a 3x3 kernel, weight is {ws:?}")));
        }
        if ws[1] != xs[1] {
            return Err(Error::Shape(format!(
                "conv2d input {xs:?} has {} channels but weight {ws:?} expects {}",
                xs[1], ws[1]
            )));
        }
        if bs != [ws[0], 1, 1, 1] {
            return Err(Error::Shape(format!(
                "conv2d bias {bs:?} does not match weight {ws:?}"
            )));
        }
        let out = kernels::conv2d_forward(self.value(input), self.value(weight), self.value(bias));
        check_finite(&out, "conv2d")?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(out, Op::Conv2d { input, weight, bias }, rg))
    }

    /// 2x2 max pooling with stride 2.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let [_, _, h, w] = self.shape(input);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool2 needs even spatial size, input is {:?}",
                self.shape(input)
            )));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input));
        check_finite(&out, "maxpool2")?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let out = kernels::upsample2_forward(self.value(input));
        check_finite(&out, "upsample2")?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Upsample2 { input }, rg))
    }

    /// `max(0, x)`; the gradient at exactly zero is zero.
    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.values().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect();
        let out = Tensor4::new(x.shape(), data)?;
        check_finite(&out, "relu")?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Relu { input }, rg))
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(Error::Shape(format!("cannot concatenate {sa:?} with {sb:?}")));
        }
        let out = kernels::concat_forward(self.value(a), self.value(b));
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    /// Mean squared error, a `(1, 1, 1, 1)` node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(Error::Shape(format!("mse between {sp:?} and {st:?}")));
        }
        let p = self.value(pred).values();
        let t = self.value(target).values();
        let n = p.len().max(1) as f64;
        let sum: f64 = p
            .iter()
            .zip(t)
            .map(|(&a, &b)| {
                let d = (a - b).to_f64();
                d * d
            })
            .sum();
        let out = Tensor4::scalar(T::from_f64(sum / n));
        check_finite(&out, "mse")?;
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(out, Op::Mse { pred, target }, rg))
    }

    /// Back-propagates from the scalar node `loss`, adding parameter
    /// gradients into `store` and input-leaf gradients into the tape.
    /// Gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let shape = self.shape(loss);
        if shape != [1, 1, 1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut adj: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor4::scalar(T::ONE));

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Input => accumulate(&mut self.nodes[idx].grad, g),
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.value.shape() != g.shape() {
                        return Err(Error::Shape(format!(
                            "parameter {} changed shape during the pass",
                            p.name
                        )));
                    }
                    accumulate(&mut p.grad, g);
                }
                Op::Conv2d { input, weight, bias } => {
                    let (input, weight, bias) = (*input, *weight, *bias);
                    let (dx, dw, db) = kernels::conv2d_backward(
                        self.value(input),
                        self.value(weight),
                        &g,
                        self.needs(input),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut adj[input.0], dx);
                    }
                    if self.needs(weight) {
                        accumulate(&mut adj[weight.0], dw);
                    }
                    if self.needs(bias) {
                        accumulate(&mut adj[bias.0], db);
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let input = *input;
                    let dx = kernels::maxpool2_backward(self.shape(input), argmax, &g);
                    accumulate(&mut adj[input.0], dx);
                }
                Op::Upsample2 { input } => {
                    let input = *input;
                    accumulate(&mut adj[input.0], kernels::upsample2_backward(&g));
                }
                Op::Relu { input } => {
                    let input = *input;
                    let out = &self.nodes[idx].value;
                    let data = g
                        .values()
                        .iter()
                        .zip(out.values())
                        .map(|(&gv, &y)| if y > T::ZERO { gv } else { T::ZERO })
                        .collect();
                    accumulate(&mut adj[input.0], Tensor4::new(g.shape(), data)?);
                }
                Op::Concat { a, b } => {
                    let (a, b) = (*a, *b);
                    let (ga, gb) = kernels::concat_backward(&g, self.shape(a)[1]);
                    if self.needs(a) {
                        accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(b) {
                        accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::Mse { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    let upstream = g.values()[0];
                    let p = self.value(pred);
                    let t = self.value(target);
                    let scale = upstream * T::from_f64(2.0 / p.len().max(1) as f64);
                    let diff: Vec<T> = p
                        .values()
                        .iter()
                        .zip(t.values())
                        .map(|(&a, &b)| scale * (a - b))
                        .collect();
                    let shape = p.shape();
                    if self.needs(target) {
                        let neg = diff.iter().map(|&d| -d).collect();
                        accumulate(&mut adj[target.0], Tensor4::new(shape, neg)?);
                    }
                    if self.needs(pred) {
                        accumulate(&mut adj[pred.0], Tensor4::new(shape, diff)?);
                    }
                }
            }
        }
        Ok(())
    }
}
