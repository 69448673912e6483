use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] fspnet_core::Error),
    #[error(transparent)]
    Metrics(#[from] fspnet_metrics::MetricError),
}

impl HarnessError {
    /// Process exit status: 2 config, 3 data, 4 divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use fspnet_metrics::MetricError as M;
        match self {
            HarnessError::Config(_) | HarnessError::Model(fspnet_core::Error::Config(_)) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Metrics(M::Io(_) | M::Csv(_) | M::Json(_)) => 1,
            HarnessError::Metrics(_) => 3,
            HarnessError::Divergence { .. } => 4,
            HarnessError::Checkpoint(_) | HarnessError::Io(_) | HarnessError::Model(_) => 1,
        }
    }
}

pub(crate) fn data(msg: impl Into<String>) -> HarnessError {
    HarnessError::Data(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
