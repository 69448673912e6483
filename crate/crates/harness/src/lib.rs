//! Synthetic data, training, checkpoints, prediction and evaluation for
//! the segmentation network, and the `fspnet` command-line tool built on
//! them.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod predict;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use data::{gen_synthetic, Image, Sample};
pub use error::{HarnessError, Result};
pub use predict::Predictor;
pub use train::{train, LossRecord, TrainRun};
