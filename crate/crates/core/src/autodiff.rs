//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is the tape: every operation evaluates eagerly, appends its
//! output value and a record of its inputs, and returns a [`Var`] handle.
//! [`Graph::backward`] then walks the records in exact reverse order of
//! execution. One graph serves one forward/backward pass and is not shared
//! between threads.

use crate::error::{Error, Result};
use crate::ops::{self, Activation, Combine, ConvSpec};
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Node {
    Constant,
    Param,
    Conv2d { input: Var, weights: Var, bias: Var, spec: ConvSpec },
    MaxPool { input: Var, argmax: Vec<usize> },
    DepthToSpace { input: Var, block: usize },
    SpaceToDepth { input: Var, block: usize },
    Activation { input: Var, kind: Activation },
    Combine { a: Var, b: Var, kind: Combine },
    Mul { a: Var, b: Var },
    SliceChannels { input: Var, start: usize },
    ChannelScale { input: Var, scale: Var },
    Sum { input: Var },
    L1 { a: Var, b: Var },
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
    needs_grad: Vec<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, node: Node, needs_grad: bool) -> Var {
        self.values.push(value);
        self.nodes.push(node);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    /// Records a value that gradients are not tracked for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Node::Constant, false)
    }

    /// Records a trainable value; [`Graph::backward`] always returns a
    /// gradient for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Node::Param, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.values[v.0].shape()
    }

    /// Number of recorded values.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn conv2d(&mut self, input: Var, weights: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weights), self.value(bias), &spec)?;
        let ng = self.any_grad(&[input, weights, bias]);
        Ok(self.push(out, Node::Conv2d { input, weights, bias, spec }, ng))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2x2(self.value(input))?;
        let ng = self.any_grad(&[input]);
        Ok(self.push(out, Node::MaxPool { input, argmax }, ng))
    }

    pub fn depth_to_space(&mut self, input: Var, block: usize) -> Result<Var> {
        let out = ops::depth_to_space(self.value(input), block)?;
        let ng = self.any_grad(&[input]);
        Ok(self.push(out, Node::DepthToSpace { input, block }, ng))
    }

    pub fn space_to_depth(&mut self, input: Var, block: usize) -> Result<Var> {
        let out = ops::space_to_depth(self.value(input), block)?;
        let ng = self.any_grad(&[input]);
        Ok(self.push(out, Node::SpaceToDepth { input, block }, ng))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = ops::activation(self.value(input), kind);
        let ng = self.any_grad(&[input]);
        self.push(out, Node::Activation { input, kind }, ng)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    pub fn combine(&mut self, a: Var, b: Var, kind: Combine) -> Result<Var> {
        let out = ops::elementwise_combine(self.value(a), self.value(b), kind)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Node::Combine { a, b, kind }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.combine(a, b, Combine::Add)
    }

    pub fn average(&mut self, a: Var, b: Var) -> Result<Var> {
        self.combine(a, b, Combine::Average)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Node::Mul { a, b }, ng))
    }

    /// Channels `start..start + len` of `input`.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input);
        if len == 0 || start + len > s.channels {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{} out of {} channels", start + len, s.channels),
            ));
        }
        let os = Shape::new(s.batch, len, s.height, s.width);
        let mut out = Vec::with_capacity(os.numel());
        let src = self.value(input);
        for b in 0..s.batch {
            let item = src.item(b);
            out.extend_from_slice(&item[start * s.plane()..(start + len) * s.plane()]);
        }
        let out = Tensor::new(os, out)?;
        let ng = self.any_grad(&[input]);
        Ok(self.push(out, Node::SliceChannels { input, start }, ng))
    }

    /// Multiplies every channel `c` of `input` by `scale[c]`.
    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let s = self.shape(input);
        let w = self.value(scale);
        if w.len() != s.channels {
            return Err(Error::ShapeMismatch {
                op: "channel_scale",
                dim: "scale length",
                got: w.len(),
                expected: s.channels,
            });
        }
        let mut out = self.value(input).clone();
        let plane = s.plane();
        let w = w.data().to_vec();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let k = w[i % s.channels];
            chunk.iter_mut().for_each(|v| *v *= k);
        }
        let ng = self.any_grad(&[input, scale]);
        Ok(self.push(out, Node::ChannelScale { input, scale }, ng))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        let ng = self.any_grad(&[input]);
        self.push(out, Node::Sum { input }, ng)
    }

    /// Mean absolute difference, as a scalar.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = crate::train::l1_loss(self.value(a), self.value(b))?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(loss), Node::L1 { a, b }, ng))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::NonScalarLoss(ls.dims()));
        }
        let n = self.values.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let mut visited = Vec::new();
        grads[loss.0] = Some(Tensor::full(ls, 1.0));

        for id in (0..=loss.0).rev() {
            if !self.needs_grad[id] {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            visited.push(id);
            self.backward_node(id, &upstream, &mut grads)?;
            grads[id] = Some(upstream);
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node, Node::Param) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(self.values[id].shape()));
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn backward_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let send = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| {
            if !self.needs_grad[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.accumulate(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &self.nodes[id] {
            Node::Constant | Node::Param => {}
            Node::Conv2d { input, weights, bias, spec } => {
                let cg = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*weights),
                    spec,
                    g,
                    self.needs_grad[input.0],
                )?;
                if let Some(dx) = cg.input {
                    send(grads, *input, dx);
                }
                send(grads, *weights, cg.weights);
                let bs = self.shape(*bias);
                send(grads, *bias, Tensor::new(bs, cg.bias)?);
            }
            Node::MaxPool { input, argmax } => {
                let dx = ops::maxpool2x2_backward(self.shape(*input), argmax, g);
                send(grads, *input, dx);
            }
            Node::DepthToSpace { input, block } => {
                send(grads, *input, ops::space_to_depth(g, *block)?);
            }
            Node::SpaceToDepth { input, block } => {
                send(grads, *input, ops::depth_to_space(g, *block)?);
            }
            Node::Activation { input, kind } => {
                let x = self.value(*input).data();
                let y = self.values[id].data();
                let mut dx = g.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(x).zip(y) {
                    *d *= kind.derivative(xi, yi);
                }
                send(grads, *input, dx);
            }
            Node::Combine { a, b, kind } => {
                let scaled = match kind {
                    Combine::Add => g.clone(),
                    Combine::Average => g.map(|v| v / 2.0),
                };
                send(grads, *a, scaled.clone());
                send(grads, *b, scaled);
            }
            Node::Mul { a, b } => {
                if self.needs_grad[a.0] {
                    send(grads, *a, g.zip_map(self.value(*b), "mul backward", |x, y| x * y)?);
                }
                if self.needs_grad[b.0] {
                    send(grads, *b, g.zip_map(self.value(*a), "mul backward", |x, y| x * y)?);
                }
            }
            Node::SliceChannels { input, start } => {
                let s = self.shape(*input);
                let os = g.shape();
                let mut dx = Tensor::zeros(s);
                let plane = s.plane();
                for b in 0..s.batch {
                    let dst = b * s.item() + start * plane;
                    dx.data_mut()[dst..dst + os.item()].copy_from_slice(g.item(b));
                }
                send(grads, *input, dx);
            }
            Node::ChannelScale { input, scale } => {
                let s = self.shape(*input);
                let plane = s.plane();
                let w = self.value(*scale);
                let x = self.value(*input);
                let mut dx = g.clone();
                let mut dw = vec![0.0; s.channels];
                for (i, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
                    let c = i % s.channels;
                    let xs = &x.data()[i * plane..(i + 1) * plane];
                    dw[c] += chunk.iter().zip(xs).map(|(gv, xv)| gv * xv).sum::<f64>();
                    let k = w.data()[c];
                    chunk.iter_mut().for_each(|v| *v *= k);
                }
                send(grads, *input, dx);
                send(grads, *scale, Tensor::new(w.shape(), dw)?);
            }
            Node::Sum { input } => {
                let s = self.shape(*input);
                send(grads, *input, Tensor::full(s, g.data()[0]));
            }
            Node::L1 { a, b } => {
                let n = self.value(*a).len() as f64;
                let scale = g.data()[0] / n;
                let da = self.value(*a).zip_map(self.value(*b), "l1 backward", |x, y| {
                    let d = x - y;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })?;
                if self.needs_grad[b.0] {
                    send(grads, *b, da.map(|v| -v));
                }
                send(grads, *a, da);
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    /// Every [`Graph::param`] has an entry, zero-filled when unused.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Node indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Padding;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new([1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn relu_of_negatives_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new([1, 1, 2, 2], vec![-1.0, -2.0, -0.1, -5.0]).unwrap());
        let r = g.relu(x);
        let loss = g.sum(r);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([1, 1, 2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([1, 1, 2, 2], 1.0));
        let unused = g.param(Tensor::full([1, 3, 1, 1], 7.0));
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        let gu = grads.get(unused).unwrap();
        assert_eq!(gu.shape(), Shape::new(1, 3, 1, 1));
        assert!(gu.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_visits_in_reverse_execution_order() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([1, 4, 2, 2], 0.3));
        let w = g.param(Tensor::full([4, 4, 1, 1], 0.1));
        let b = g.param(Tensor::zeros([1, 4, 1, 1]));
        let c = g.conv2d(x, w, b, ConvSpec::square(1, 1, Padding::Valid, 4, 4)).unwrap();
        let t = g.tanh(c);
        let d = g.depth_to_space(t, 2).unwrap();
        let loss = g.sum(d);
        let grads = g.backward(loss).unwrap();
        let order = grads.visit_order();
        assert!(order.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(order, &[loss.index(), d.index(), t.index(), c.index(), b.index(), w.index(), x.index()]);
    }

    #[test]
    fn gradient_shapes_match_primal_shapes() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([2, 3, 4, 4], 0.2));
        let w = g.param(Tensor::full([5, 3, 3, 3], 0.1));
        let b = g.param(Tensor::zeros([1, 5, 1, 1]));
        let c = g.conv2d(x, w, b, ConvSpec::square(3, 2, Padding::Same, 3, 5)).unwrap();
        let loss = g.sum(c);
        let grads = g.backward(loss).unwrap();
        for v in [x, w, b, c] {
            assert_eq!(grads.get(v).unwrap().shape(), g.shape(v));
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
        let y = g.param(Tensor::full([1, 1, 2, 2], 2.0));
        let m = g.mul(x, y).unwrap();
        let loss = g.sum(m);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert!(grads.get(y).unwrap().data().iter().all(|&v| v == 1.0));
    }
}
