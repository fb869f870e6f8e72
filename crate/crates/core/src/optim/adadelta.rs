use crate::error::{Error, Result};
use crate::model::Weights;
use crate::tensor::Scalar;

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_LR: f64 = 1.0;

/// One Adadelta update of `param` in place.
///
/// ```text
/// E[g²]  <- ρ E[g²] + (1-ρ) g²
/// Δx     <- -sqrt(E[Δx²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δx²] <- ρ E[Δx²] + (1-ρ) Δx²
/// x      <- x + lr · Δx
/// ```
pub fn adadelta_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    eg2: &mut [T],
    edx2: &mut [T],
    rho: T,
    epsilon: T,
    lr: T,
) {
    let one = T::one();
    for (((x, &g), a), d) in param.iter_mut().zip(grad).zip(eg2).zip(edx2) {
        *a = rho * *a + (one - rho) * g * g;
        let dx = -((*d + epsilon).sqrt() / (*a + epsilon).sqrt()) * g;
        *d = rho * *d + (one - rho) * dx * dx;
        *x += lr * dx;
    }
}

/// Accumulators for every tensor of a weight set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState<T = f32> {
    pub rho: f64,
    pub epsilon: f64,
    pub lr: f64,
    eg2: Weights<T>,
    edx2: Weights<T>,
}

impl<T: Scalar> AdadeltaState<T> {
    pub fn new(weights: &Weights<T>, rho: f64, epsilon: f64, lr: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in (0, 1), got {rho}"
            )));
        }
        if epsilon.is_nan() || epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if lr.is_nan() || lr < 0.0 || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lr must be non-negative, got {lr}"
            )));
        }
        Ok(Self {
            rho,
            epsilon,
            lr,
            eg2: weights.zeros_like(),
            edx2: weights.zeros_like(),
        })
    }

    /// Running average of squared gradients.
    pub fn mean_sq_grad(&self) -> &Weights<T> {
        &self.eg2
    }

    /// Running average of squared updates.
    pub fn mean_sq_update(&self) -> &Weights<T> {
        &self.edx2
    }

    /// Applies one update. A non-finite gradient aborts before anything is
    /// modified and names the offending tensor.
    pub fn step(&mut self, weights: &mut Weights<T>, grads: &Weights<T>) -> Result<()> {
        for (name, g) in grads.named_tensors() {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { param: name });
            }
        }
        let (rho, eps, lr) = (T::lit(self.rho), T::lit(self.epsilon), T::lit(self.lr));
        for (((x, g), a), d) in weights
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.eg2.tensors_mut())
            .zip(self.edx2.tensors_mut())
        {
            if x.shape() != g.shape() {
                return Err(Error::shape(
                    "adadelta",
                    format!("parameter {:?} vs gradient {:?}", x.shape(), g.shape()),
                ));
            }
            adadelta_step(x.data_mut(), g.data(), a.data_mut(), d.data_mut(), rho, eps, lr);
        }
        Ok(())
    }
}
