//! Evaluation metrics for binary segmentation of camouflaged and salient
//! objects: MAE, S-measure, F-measures, weighted F-measure and E-measures,
//! with dataset aggregation and report export.
//!
//! All maps are row-major `f64`. Swept variants binarize the prediction at
//! the 255 thresholds `k / 255`, keeping values strictly above; adaptive
//! variants keep values at or above `min(2 · mean, 1)`.

pub mod emeasure;
pub mod error;
pub mod fmeasure;
pub mod io;
pub mod mae;
pub mod map;
pub mod report;
pub mod smeasure;
pub mod sweep;
pub mod weighted;

pub use emeasure::{e_measures, EMeasures};
pub use error::{MetricError, Result};
pub use fmeasure::{f_beta, f_measures, FMeasures, BETA_SQUARED};
pub use mae::mae;
pub use map::{BinaryMask, ScoreMap};
pub use report::{evaluate, evaluate_dataset, evaluate_named, ImageScores, MetricReport, Scores};
pub use smeasure::{s_measure, DEFAULT_ALPHA};
pub use sweep::{thresholds, NUM_THRESHOLDS};
pub use weighted::weighted_f;
