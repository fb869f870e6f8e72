//! Accuracy, mean loss and the confusion matrix.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::model::{
    argmax_label, prepare_inputs, Executor, ModelGraph, PreparedSample, Weights, NUM_CLASSES,
};
use crate::tensor::Scalar;
use crate::vision::EdgeParams;

/// Samples per parallel work unit. Fixed so the reduction order does not
/// depend on the number of threads.
const CHUNK: usize = 32;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self
            .counts
            .iter_mut()
            .flatten()
            .zip(other.counts.iter().flatten())
        {
            *a += b;
        }
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// 11x11 CSV: a header row and column of class labels around the counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..NUM_CLASSES {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean cross-entropy.
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    /// Line-oriented `key=value` summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "samples={}\naccuracy={:.6}\nloss={:.6}\n",
            self.confusion.total(),
            self.accuracy,
            self.loss
        );
        for c in 0..NUM_CLASSES {
            let n = self.confusion.row_sum(c);
            let recall = if n == 0 {
                0.0
            } else {
                self.confusion.get(c, c) as f64 / n as f64
            };
            writeln!(s, "recall_{c}={recall:.6}").unwrap();
        }
        s
    }
}

/// Evaluation-mode metrics over prepared samples.
pub fn evaluate_prepared<T: Scalar>(
    graph: &ModelGraph,
    weights: &Weights<T>,
    samples: &[PreparedSample],
) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    weights.check(graph)?;
    let partials: Vec<(ConfusionMatrix, f64)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(ConfusionMatrix, f64)> {
            let mut ex = Executor::<T>::new(graph);
            let mut cm = ConfusionMatrix::new();
            let mut loss = 0.0;
            for s in chunk {
                let probs: Vec<f64> = ex
                    .forward(graph, weights, &s.input, false, 0)?
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                cm.record(usize::from(s.label), argmax_label(&probs));
                loss += ex.loss(usize::from(s.label))?.as_f64();
            }
            Ok((cm, loss))
        })
        .collect::<Result<_>>()?;
    let mut confusion = ConfusionMatrix::new();
    let mut loss = 0.0;
    for (cm, l) in &partials {
        confusion.merge(cm);
        loss += l;
    }
    Ok(Metrics {
        accuracy: confusion.accuracy(),
        loss: loss / samples.len() as f64,
        confusion,
    })
}

/// Builds the network inputs for a preprocessed split and evaluates it.
pub fn evaluate<T: Scalar>(
    graph: &ModelGraph,
    weights: &Weights<T>,
    split: &[LabeledSample],
    edge: &EdgeParams,
) -> Result<Metrics> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let prepared = prepare_inputs(graph.variant, edge, split)?;
    evaluate_prepared(graph, weights, &prepared)
}

/// Off-diagonal cells, largest count first, ties by `(true, predicted)`.
/// Zero cells are omitted.
pub fn top_confusions(confusion: &ConfusionMatrix, n: usize) -> Vec<(usize, usize, u64)> {
    let mut cells: Vec<(usize, usize, u64)> = (0..NUM_CLASSES)
        .flat_map(|t| (0..NUM_CLASSES).map(move |p| (t, p)))
        .filter(|&(t, p)| t != p)
        .map(|(t, p)| (t, p, confusion.get(t, p)))
        .filter(|&(_, _, c)| c > 0)
        .collect();
    cells.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    cells.truncate(n);
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, Variant};
    use crate::vision::Image;

    fn split(labels: &[u8]) -> Vec<LabeledSample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledSample::new(i as u64, Image::filled(28, 28, 1.0), l, "t").unwrap())
            .collect()
    }

    #[test]
    fn constant_class_zero_model() {
        // zero weights give uniform probabilities, which the tie rule maps to 0
        let g = build(Variant::Wc);
        let w = Weights::<f32>::zeros(&g);
        let m = evaluate(&g, &w, &split(&[0; 10]), &EdgeParams::default()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.confusion.get(0, 0), 10);
        assert!((m.loss - 10f64.ln()).abs() < 1e-5);
        let m = evaluate(&g, &w, &split(&[3; 10]), &EdgeParams::default()).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.confusion.get(3, 0), 10);
    }

    #[test]
    fn empty_split_is_an_error() {
        let g = build(Variant::Wc);
        let w = Weights::<f32>::zeros(&g);
        assert!(matches!(
            evaluate(&g, &w, &[], &EdgeParams::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn top_confusions_order_and_ties() {
        let mut counts = [[0u64; 10]; 10];
        counts[4][4] = 9;
        assert!(top_confusions(&ConfusionMatrix::from_counts(counts), 5).is_empty());
        counts[2][3] = 5;
        counts[0][1] = 3;
        assert_eq!(
            top_confusions(&ConfusionMatrix::from_counts(counts), 5),
            [(2, 3, 5), (0, 1, 3)]
        );
        let mut counts = [[0u64; 10]; 10];
        counts[1][0] = 2;
        counts[0][1] = 2;
        assert_eq!(
            top_confusions(&ConfusionMatrix::from_counts(counts), 1),
            [(0, 1, 2)]
        );
    }

    #[test]
    fn csv_is_eleven_by_eleven() {
        let mut cm = ConfusionMatrix::new();
        cm.record(9, 8);
        let csv = cm.to_csv();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 11);
        assert!(rows.iter().all(|r| r.split(',').count() == 11));
        assert_eq!(rows[10], "9,0,0,0,0,0,0,0,0,1,0");
    }
}
