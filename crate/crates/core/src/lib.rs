//! Elastic detection transformer: one set of shared weights serving a whole
//! space of sub-nets, with weight-sharing training, grid search over the
//! space, evaluation and latency tooling.

pub mod archive;
pub mod autodiff;
pub mod bench;
pub mod boxes;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nas;
pub mod raster;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{DetectionOutput, ElasticWeights, ModelConfig, ModelDims};
pub use scalar::Scalar;

pub type WeightsF32 = model::ElasticWeights<f32>;
pub type WeightsF64 = model::ElasticWeights<f64>;
pub type OutputF32 = model::DetectionOutput<f32>;
pub type OutputF64 = model::DetectionOutput<f64>;
pub type ImageF32 = raster::Image<f32>;
pub type ImageF64 = raster::Image<f64>;
pub type MatrixF32 = tensor::Matrix<f32>;
pub type MatrixF64 = tensor::Matrix<f64>;
pub type TrainStateF32 = train::TrainState<f32>;
pub type TrainStateF64 = train::TrainState<f64>;
