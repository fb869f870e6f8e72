//! The EdgeNet graph, its ablation variants, weights and the forward and
//! backward executor.

mod exec;
mod graph;
mod params;

pub use exec::{Executor, InputPair};
pub use graph::{
    build, count_params_eq1, count_params_standard, Activation, GraphBuilder, InputKind, ModelGraph, Node,
    Op, Variant, DROPOUT, INPUT_EXTENT, NUM_CLASSES,
};
pub use params::{LayerParams, Weights};

use rayon::prelude::*;

use crate::dataset::{preprocess_image, LabeledSample};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};
use crate::vision::{extract_edges, EdgeMethod, EdgeParams, Image};

/// Builds the network input for an already preprocessed image: inverts it
/// for the ID variant and extracts the edge map (all zeros when the method is
/// `None`).
pub fn make_input(variant: Variant, edge: &EdgeParams, image: &Image) -> Result<InputPair> {
    let image = if variant.inverts_input() {
        image.inverted()
    } else {
        image.clone()
    };
    let edges = if variant.has_edge_connection() && edge.method != EdgeMethod::None {
        extract_edges(&image, edge)?
    } else {
        Image::filled(image.height(), image.width(), 0.0)
    };
    InputPair::new(image, edges)
}

/// A sample ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: u64,
    pub label: u8,
    pub input: InputPair,
}

/// [`make_input`] over a split of preprocessed samples, in parallel.
pub fn prepare_inputs(
    variant: Variant,
    edge: &EdgeParams,
    samples: &[LabeledSample],
) -> Result<Vec<PreparedSample>> {
    samples
        .par_iter()
        .map(|s| {
            Ok(PreparedSample {
                id: s.id,
                label: s.label,
                input: make_input(variant, edge, &s.image)?,
            })
        })
        .collect()
}

/// One-shot forward pass returning class probabilities.
pub fn forward<T: Scalar>(
    graph: &ModelGraph,
    weights: &Weights<T>,
    input: &InputPair,
    training: bool,
    seed: u64,
) -> Result<Tensor<T>> {
    let mut ex = Executor::new(graph);
    let p = ex.forward(graph, weights, input, training, seed)?;
    Tensor::new(vec![p.len()], p.to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Index of the largest probability; ties go to the smaller label.
pub fn argmax_label(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

/// Full inference path on a raw image: preprocess, build the input pair,
/// forward in evaluation mode.
pub fn predict<T: Scalar>(
    graph: &ModelGraph,
    weights: &Weights<T>,
    image: &Image,
    edge: &EdgeParams,
) -> Result<Prediction> {
    weights.check(graph)?;
    let input = make_input(graph.variant, edge, &preprocess_image(image)?)?;
    let probs = forward(graph, weights, &input, false, 0)?;
    let probabilities: Vec<f64> = probs.data().iter().map(|v| v.as_f64()).collect();
    Ok(Prediction {
        label: argmax_label(&probabilities),
        probabilities,
    })
}
