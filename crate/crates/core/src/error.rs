use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("degenerate output in {context}: {detail}")]
    DegenerateOutput { context: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph construction failed at node `{node}`: {detail}")]
    Graph { node: String, detail: String },

    #[error("gradient tape is stale: graph parameters changed since forward (tape v{tape}, graph v{graph})")]
    StaleTape { tape: u64, graph: u64 },

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("label {0} is not 0 or 1")]
    InvalidLabel(f64),

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("io error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::DegenerateOutput { .. } => "degenerate-output",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) => "config",
            Error::Graph { .. } => "graph",
            Error::StaleTape { .. } => "stale-tape",
            Error::UnknownNode(_) => "unknown-node",
            Error::InvalidLabel(_) => "invalid-label",
            Error::EmptyEvaluation => "empty-evaluation",
            Error::Dataset(_) => "dataset",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
        }
    }
}
