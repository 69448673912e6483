use thiserror::Error;

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: prediction is {pred_h}x{pred_w}, ground truth is {gt_h}x{gt_w}")]
    ShapeMismatch {
        pred_h: usize,
        pred_w: usize,
        gt_h: usize,
        gt_w: usize,
    },
    #[error("{0} needs at least one foreground pixel in the ground truth")]
    EmptyForeground(&'static str),
    #[error("cannot evaluate an empty dataset")]
    EmptyDataset,
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("{path}: {source}")]
    Image { path: String, source: image::ImageError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
