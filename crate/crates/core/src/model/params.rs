use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{ModelGraph, Op};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::{ConvParams, DenseParams, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T = f32> {
    Conv(ConvParams<T>),
    Dense(DenseParams<T>),
}

impl<T: Scalar> LayerParams<T> {
    pub fn weights(&self) -> &Tensor<T> {
        match self {
            LayerParams::Conv(p) => &p.weights,
            LayerParams::Dense(p) => &p.weights,
        }
    }

    pub fn bias(&self) -> &Tensor<T> {
        match self {
            LayerParams::Conv(p) => &p.bias,
            LayerParams::Dense(p) => &p.bias,
        }
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 2] {
        match self {
            LayerParams::Conv(p) => [&mut p.weights, &mut p.bias],
            LayerParams::Dense(p) => [&mut p.weights, &mut p.bias],
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            LayerParams::Conv(p) => p.in_channels * p.kernel_h * p.kernel_w,
            LayerParams::Dense(p) => p.in_features,
        }
    }
}

/// Trainable parameters of a graph, one entry per conv/dense node in graph
/// order. Also used as the gradient accumulator layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T = f32> {
    names: Vec<String>,
    layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(graph: &ModelGraph) -> Self {
        let mut names = Vec::new();
        let mut layers = Vec::new();
        for n in graph.param_nodes() {
            names.push(n.name.clone());
            layers.push(match n.op {
                Op::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    dilation,
                    padding,
                } => LayerParams::Conv(
                    ConvParams::zeros(in_channels, out_channels, kernel, kernel)
                        .with_dilation(dilation)
                        .with_padding(padding),
                ),
                Op::Dense {
                    in_features,
                    out_features,
                } => LayerParams::Dense(DenseParams::zeros(in_features, out_features)),
                _ => unreachable!("param_nodes yields conv and dense nodes only"),
            });
        }
        Self { names, layers }
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases. Each
    /// layer draws from its own stream keyed by its position.
    pub fn init_he(graph: &ModelGraph, seed: u64) -> Self {
        let mut w = Self::zeros(graph);
        for (i, layer) in w.layers.iter_mut().enumerate() {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            let [weights, _] = layer.tensors_mut();
            for v in weights.data_mut() {
                *v = T::lit(rng.gen_range(-bound..bound));
            }
        }
        w
    }

    pub fn zeros_like(&self) -> Self {
        let mut w = self.clone();
        w.fill_zero();
        w
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().fill(T::zero());
        }
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &LayerParams<T> {
        &self.layers[index]
    }

    pub(crate) fn layer_mut(&mut self, index: usize) -> &mut LayerParams<T> {
        &mut self.layers[index]
    }

    /// `(name, tensor)` pairs, `<layer>.weight` then `<layer>.bias`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.layers)
            .flat_map(|(n, l)| {
                [
                    (format!("{n}.weight"), l.weights()),
                    (format!("{n}.bias"), l.bias()),
                ]
            })
            .collect()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [l.weights(), l.bias()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            names: self.names.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    LayerParams::Conv(p) => LayerParams::Conv(ConvParams {
                        weights: p.weights.cast(),
                        bias: p.bias.cast(),
                        kernel_h: p.kernel_h,
                        kernel_w: p.kernel_w,
                        in_channels: p.in_channels,
                        out_channels: p.out_channels,
                        stride: p.stride,
                        dilation: p.dilation,
                        padding: p.padding,
                    }),
                    LayerParams::Dense(p) => LayerParams::Dense(DenseParams {
                        in_features: p.in_features,
                        out_features: p.out_features,
                        weights: p.weights.cast(),
                        bias: p.bias.cast(),
                    }),
                })
                .collect(),
        }
    }

    /// Replaces tensor values from `(name, tensor)` pairs, which must cover
    /// exactly this weight set with matching shapes.
    pub fn load_named(graph: &ModelGraph, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut w = Self::zeros(graph);
        let expected: Vec<(String, Vec<usize>)> = w
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != tensors.len() {
            return Err(Error::WeightMismatch(format!(
                "graph has {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((dst, (want_name, want_shape)), (name, t)) in w.tensors_mut().zip(&expected).zip(tensors) {
            if &name != want_name || t.shape() != want_shape.as_slice() {
                return Err(Error::WeightMismatch(format!(
                    "expected `{want_name}` {want_shape:?}, got `{name}` {:?}",
                    t.shape()
                )));
            }
            *dst = t;
        }
        Ok(w)
    }

    /// Checks that this weight set fits `graph`.
    pub fn check(&self, graph: &ModelGraph) -> Result<()> {
        let want = Self::zeros(graph);
        let ours: Vec<(String, &[usize])> = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        let theirs: Vec<(String, &[usize])> = want
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        if ours != theirs {
            return Err(Error::WeightMismatch(format!(
                "weights describe {} tensors that do not match the {} graph",
                ours.len(),
                graph.variant
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::{build, count_params_standard, Variant};

    #[test]
    fn layout_matches_graph() {
        let g = build(Variant::EdgeNet);
        let w = Weights::<f32>::zeros(&g);
        assert_eq!(w.param_count() as u64, count_params_standard(&g));
        let names: Vec<String> = w.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "iConv.weight");
        assert_eq!(names.last().unwrap(), "FC2.bias");
        assert_eq!(names.len(), 16);
    }

    #[test]
    fn he_init_is_bounded_and_seeded() {
        let g = build(Variant::Wc);
        let a = Weights::<f32>::init_he(&g, 7);
        assert_eq!(a, Weights::init_he(&g, 7));
        assert_ne!(a, Weights::init_he(&g, 8));
        for layer in a.layers() {
            let bound = (6.0 / layer.fan_in() as f32).sqrt();
            assert!(layer.weights().data().iter().all(|v| v.abs() <= bound));
            assert!(layer.bias().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mismatched_weights_are_rejected() {
        let w = Weights::<f32>::zeros(&build(Variant::Wc));
        assert!(w.check(&build(Variant::Wc)).is_ok());
        assert!(matches!(
            w.check(&build(Variant::EdgeNet)),
            Err(Error::WeightMismatch(_))
        ));
        let named: Vec<(String, Tensor<f32>)> = w
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        assert!(Weights::load_named(&build(Variant::EdgeNet), named.clone()).is_err());
        assert_eq!(Weights::load_named(&build(Variant::Wc), named).unwrap(), w);
    }
}
