//! Contrastive and adversarial multi-source domain adaptation for time series.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod ops;
pub mod pairing;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
