//! The elastic detection transformer.
//!
//! Every architecture knob in [`ModelConfig`] is applied at call time to one
//! shared [`ElasticWeights`]; no parameter is specific to a sub-net.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod forward;
pub mod position;
pub mod queries;
pub mod resample;
pub mod segmentation;
pub mod weights;
pub mod window;

pub use config::{ModelConfig, ModelDims};
pub use encoder::{encoder_forward, EncoderFeatures, EncoderMode};
pub use forward::{model_forward, model_forward_counted, DetectionOutput, ForwardOptions};
pub use position::interpolate_position_grid;
pub use queries::{select_queries, SelectedQuery};
pub use resample::resample_patch_kernel;
pub use weights::ElasticWeights;
pub use window::{window_merge, window_partition};
