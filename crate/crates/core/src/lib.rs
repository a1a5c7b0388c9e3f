//! Bidirectional photo/sketch synthesis with a shared latent space and
//! cosine-margin cross-modal recognition.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below fix the training precision.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use config::Config;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model = nn::ModelState<f32>;
pub type Params = nn::ParamStore<f32>;
pub type Trainer = train::TrainState<f32>;
