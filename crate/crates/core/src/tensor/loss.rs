use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Softmax over a flat logit vector, with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::new(
        logits.shape().to_vec(),
        exps.into_iter().map(|e| e / total).collect(),
    )
    .expect("same shape")
}

fn check_label(k: usize, label: usize) -> Result<()> {
    if label >= k {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Categorical cross-entropy of softmax output `probs` against a one-hot
/// target at `label`.
///
/// Returns the loss and the gradient with respect to the *logits* that
/// produced `probs` (`probs - onehot`).
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    check_label(probs.len(), label)?;
    let p = probs.data()[label].max(T::min_positive_value());
    let mut grad = probs.clone();
    grad.data_mut()[label] -= T::one();
    Ok((-p.ln(), grad))
}

/// Softmax and cross-entropy fused through log-sum-exp, so the loss stays
/// finite for arbitrarily confident logits. Returns `(loss, probs, d_logits)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    label: usize,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    check_label(logits.len(), label)?;
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let log_total = logits.data().iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    let loss = max + log_total - logits.data()[label];
    let probs = softmax(logits);
    let mut grad = probs.clone();
    grad.data_mut()[label] -= T::one();
    Ok((loss, probs, grad))
}
