//! Node-level graph out-of-distribution detection with three variational
//! encoders and energy scoring.

pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod detection;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod train;

use thiserror::Error;

/// Any failure of a pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Bench(#[from] bench::BenchError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Detection(#[from] detection::DetectionError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl Error {
    /// 2 for numerical or contract failures, 1 for usage and I/O.
    pub fn exit_code(&self) -> i32 {
        use train::TrainError as T;
        match self {
            Error::Train(T::NonFinite { .. } | T::Autodiff { .. })
            | Error::Detection(_)
            | Error::Autodiff(_)
            | Error::GradCheck(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
