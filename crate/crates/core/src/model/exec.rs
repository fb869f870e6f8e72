use super::graph::{Activation, InputKind, ModelGraph, Op};
use super::params::{LayerParams, Weights};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::{
    avgpool2d_backward_accumulate, avgpool2d_into, conv2d_backward_accumulate, conv2d_forward_into,
    dense_backward_accumulate, dense_forward_into, DropoutMask, Scalar,
};
use crate::vision::Image;

/// The two network inputs: the image and its edge map.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPair {
    pub image: Image,
    pub edge: Image,
}

impl InputPair {
    pub fn new(image: Image, edge: Image) -> Result<Self> {
        if (image.height(), image.width()) != (edge.height(), edge.width()) {
            return Err(Error::shape(
                "input pair",
                format!(
                    "image is {}x{}, edge map is {}x{}",
                    image.height(),
                    image.width(),
                    edge.height(),
                    edge.width()
                ),
            ));
        }
        if !edge.is_binary() {
            return Err(Error::InvalidArgument("edge map must be binary".into()));
        }
        Ok(Self { image, edge })
    }
}

fn dims(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [c, h, w] => (c, h, w),
        _ => (1, 1, shape.iter().product()),
    }
}

/// `(&mut v[a], &v[b])` for `a < b`.
fn split_pair<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut Vec<T>, &Vec<T>) {
    debug_assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &hi[0])
}

/// Reusable activation and gradient buffers for single-sample passes over
/// one graph.
#[derive(Clone, Debug)]
pub struct Executor<T: Scalar = f32> {
    pre: Vec<Vec<T>>,
    out: Vec<Vec<T>>,
    grad: Vec<Vec<T>>,
    masks: Vec<DropoutMask<T>>,
    needs_grad: Vec<bool>,
    col: Vec<T>,
}

impl<T: Scalar> Executor<T> {
    pub fn new(graph: &ModelGraph) -> Self {
        let nodes = graph.nodes();
        let mut needs_grad = vec![false; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            needs_grad[i] = !matches!(n.op, Op::Input(_))
                && (n.param.is_some() || n.inputs.iter().any(|&j| needs_grad[j]));
        }
        Self {
            pre: nodes.iter().map(|n| vec![T::zero(); n.len()]).collect(),
            out: nodes.iter().map(|n| vec![T::zero(); n.len()]).collect(),
            grad: nodes.iter().map(|n| vec![T::zero(); n.len()]).collect(),
            masks: nodes.iter().map(|n| DropoutMask::identity(n.len())).collect(),
            needs_grad,
            col: Vec::new(),
        }
    }

    /// Class probabilities. In training mode dropout masks are drawn from
    /// `seed`; evaluation mode ignores it.
    pub fn forward(
        &mut self,
        graph: &ModelGraph,
        weights: &Weights<T>,
        input: &InputPair,
        training: bool,
        seed: u64,
    ) -> Result<&[T]> {
        if self.out.len() != graph.nodes().len() {
            return Err(Error::shape(
                "forward",
                "executor was built for a different graph",
            ));
        }
        let (h, w) = (input.image.height(), input.image.width());
        if (h, w) != (graph.input_height, graph.input_width) {
            return Err(Error::shape(
                "forward",
                format!(
                    "input is {h}x{w}, graph expects {}x{}",
                    graph.input_height, graph.input_width
                ),
            ));
        }
        for (i, node) in graph.nodes().iter().enumerate() {
            let pre = &mut self.pre[i];
            match node.op {
                Op::Input(kind) => {
                    let img = match kind {
                        InputKind::Image => &input.image,
                        InputKind::Edge => &input.edge,
                    };
                    for (d, &s) in pre.iter_mut().zip(img.pixels()) {
                        *d = T::lit(f64::from(s));
                    }
                }
                Op::Conv { .. } => {
                    let j = node.inputs[0];
                    let LayerParams::Conv(p) = weights.layer(node.param.expect("conv has params")) else {
                        return Err(Error::WeightMismatch(format!(
                            "`{}` is not a conv layer",
                            node.name
                        )));
                    };
                    conv2d_forward_into(&self.out[j], dims(&graph.nodes()[j].shape), p, &mut self.col, pre)?;
                }
                Op::Concat => {
                    let (a, b) = (&self.out[node.inputs[0]], &self.out[node.inputs[1]]);
                    pre[..a.len()].copy_from_slice(a);
                    pre[a.len()..].copy_from_slice(b);
                }
                Op::AvgPool => {
                    let j = node.inputs[0];
                    avgpool2d_into(&self.out[j], dims(&graph.nodes()[j].shape), pre);
                }
                Op::Flatten => pre.copy_from_slice(&self.out[node.inputs[0]]),
                Op::Dense { in_features, .. } => {
                    let LayerParams::Dense(p) = weights.layer(node.param.expect("dense has params")) else {
                        return Err(Error::WeightMismatch(format!(
                            "`{}` is not a dense layer",
                            node.name
                        )));
                    };
                    if p.in_features != in_features {
                        return Err(Error::WeightMismatch(format!("`{}` input width", node.name)));
                    }
                    dense_forward_into(&self.out[node.inputs[0]], p, pre);
                }
            }

            let out = &mut self.out[i];
            match node.activation {
                Activation::None => out.copy_from_slice(pre),
                Activation::Relu => {
                    for (o, &v) in out.iter_mut().zip(pre.iter()) {
                        *o = if v > T::zero() { v } else { T::zero() };
                    }
                }
                Activation::Softmax => {
                    let max = pre.iter().copied().fold(T::neg_infinity(), T::max);
                    for (o, &v) in out.iter_mut().zip(pre.iter()) {
                        *o = (v - max).exp();
                    }
                    let total: T = out.iter().copied().sum();
                    for o in out.iter_mut() {
                        *o = *o / total;
                    }
                }
            }
            let mask = &mut self.masks[i];
            if training && node.dropout > 0.0 {
                mask.resample(node.dropout, derive_seed(seed, &[i as u64]))?;
                for (o, &s) in out.iter_mut().zip(mask.scale()) {
                    *o *= s;
                }
            } else if mask.scale().len() != out.len() || mask.scale().iter().any(|&s| s != T::one()) {
                mask.resize_identity(out.len());
            }
        }
        Ok(self.out.last().map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Cross-entropy of the last forward pass against `label`.
    pub fn loss(&self, label: usize) -> Result<T> {
        let logits = self.pre.last().ok_or(Error::Empty("graph"))?;
        if label >= logits.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                logits.len()
            )));
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        Ok(lse - logits[label])
    }

    /// Backpropagates `scale * d(loss)/d(logits)` of the last forward pass and
    /// adds the parameter gradients into `grads`. Returns the unscaled loss.
    pub fn backward(
        &mut self,
        graph: &ModelGraph,
        weights: &Weights<T>,
        label: usize,
        scale: T,
        grads: &mut Weights<T>,
    ) -> Result<T> {
        let loss = self.loss(label)?;
        let nodes = graph.nodes();
        let last = nodes.len() - 1;
        for g in &mut self.grad {
            g.fill(T::zero());
        }
        // softmax + cross-entropy: d/d(logits) = probs - onehot
        for (g, &p) in self.grad[last].iter_mut().zip(&self.out[last]) {
            *g = p * scale;
        }
        self.grad[last][label] -= scale;

        for i in (0..=last).rev() {
            let node = &nodes[i];
            if !self.needs_grad[i] {
                continue;
            }
            // grad[i] holds d/d(out); convert in place to d/d(pre)
            if i != last {
                let g = &mut self.grad[i];
                for (g, &s) in g.iter_mut().zip(self.masks[i].scale()) {
                    *g *= s;
                }
                if node.activation == Activation::Relu {
                    for (g, &v) in g.iter_mut().zip(&self.pre[i]) {
                        if v <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
            }
            match node.op {
                Op::Input(_) => {}
                Op::Conv { .. } => {
                    let j = node.inputs[0];
                    let LayerParams::Conv(p) = weights.layer(node.param.expect("conv has params")) else {
                        unreachable!("forward checked the layer kind")
                    };
                    let LayerParams::Conv(gp) = grads.layer_mut(node.param.expect("conv has params")) else {
                        return Err(Error::WeightMismatch("gradient layout".into()));
                    };
                    let want_dx = self.needs_grad[j];
                    let (gj, gi) = split_pair(&mut self.grad, j, i);
                    conv2d_backward_accumulate(
                        &self.out[j],
                        dims(&nodes[j].shape),
                        p,
                        gi,
                        &mut self.col,
                        gp.weights.data_mut(),
                        gp.bias.data_mut(),
                        want_dx.then_some(gj.as_mut_slice()),
                    )?;
                }
                Op::Concat => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let split = self.out[a].len();
                    let (ga, gi) = split_pair(&mut self.grad, a, i);
                    for (d, &s) in ga.iter_mut().zip(&gi[..split]) {
                        *d += s;
                    }
                    let (gb, gi) = split_pair(&mut self.grad, b, i);
                    for (d, &s) in gb.iter_mut().zip(&gi[split..]) {
                        *d += s;
                    }
                }
                Op::AvgPool => {
                    let j = node.inputs[0];
                    let (gj, gi) = split_pair(&mut self.grad, j, i);
                    avgpool2d_backward_accumulate(gi, dims(&nodes[j].shape), gj);
                }
                Op::Flatten => {
                    let (gj, gi) = split_pair(&mut self.grad, node.inputs[0], i);
                    for (d, &s) in gj.iter_mut().zip(gi.iter()) {
                        *d += s;
                    }
                }
                Op::Dense { .. } => {
                    let j = node.inputs[0];
                    let LayerParams::Dense(p) = weights.layer(node.param.expect("dense has params")) else {
                        unreachable!("forward checked the layer kind")
                    };
                    let LayerParams::Dense(gp) = grads.layer_mut(node.param.expect("dense has params"))
                    else {
                        return Err(Error::WeightMismatch("gradient layout".into()));
                    };
                    let want_dx = self.needs_grad[j];
                    let (gj, gi) = split_pair(&mut self.grad, j, i);
                    dense_backward_accumulate(
                        &self.out[j],
                        p,
                        gi,
                        gp.weights.data_mut(),
                        gp.bias.data_mut(),
                        want_dx.then_some(gj.as_mut_slice()),
                    );
                }
            }
        }
        Ok(loss)
    }

    /// Gradient with respect to a node's output from the last backward pass.
    pub fn node_grad(&self, index: usize) -> &[T] {
        &self.grad[index]
    }

    pub fn node_output(&self, index: usize) -> &[T] {
        &self.out[index]
    }
}
