//! Multimodal fake news detection with a two-branch text and image CNN.
//!
//! The crate is organised bottom-up:
//!
//! - [`engine`]: tensors, layers with explicit backward passes, loss,
//!   RMSprop, gradient checking and the checkpoint container.
//! - [`text`]: tokenization, vocabulary, padding, and the 31 explicit text features.
//! - [`image`]: decoding, bilinear resizing and the 4 explicit image features.
//! - [`model`]: the four-subbranch network and its configuration.
//! - [`data`]: corpus loading, splitting, encoding, training, metrics,
//!   the logistic-regression baseline and corpus statistics.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to `f32`,
//! the precision models are trained in.

pub mod data;
pub mod engine;
pub mod error;
pub mod image;
pub mod model;
pub mod scalar;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = engine::Tensor<f32>;
pub type Param = engine::Param<f32>;
pub type Sequential = engine::Sequential<f32>;
pub type RmsProp = engine::RmsProp<f32>;
pub type Model = model::Model<f32>;
/// Double-precision instantiation, used for gradient verification.
pub type Model64 = model::Model<f64>;
pub type Batch = model::Batch<f32>;
