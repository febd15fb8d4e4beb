//! Model configuration, assembly, cost accounting and weight files.

mod config;
mod net;
mod weights;

pub use config::{ModelConfig, Preprocess, StageConfig};
pub use net::{build_model, count_flops, count_params, downsampled_extent, upsampled_extent, Deconv, Model, Stage, INPUT_CHANNELS};
pub use weights::{load_weights, save_weights, WeightStore, MAGIC, VERSION};
