pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod vision;

pub use error::{Error, Result};
pub use tensor::{GradBundle, Scalar, Tensor};
