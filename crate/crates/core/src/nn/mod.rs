//! Residual convolutional covariance estimator.
//!
//! Activations are `[channels, batch * length]` matrices and every
//! convolution is an im2col product, so forward and reverse passes are plain
//! matrix algebra over the flat parameter vector.

mod config;
mod io;
mod layers;
mod network;
mod output;
mod train;

pub use config::NetworkConfig;
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{covariance_from_state, ModelWeights, TrainingMeta};
pub use output::{
    loss, raw_to_sigma, raw_to_sigma_via_cholesky, raw_to_state, RawOutput, MAX_ACTIVATION,
    MIN_VARIANCE, TAU_MARGIN,
};
pub use train::{evaluate_loss, train, Schedule, TrainConfig, TrainingRun, TrainingSource};
