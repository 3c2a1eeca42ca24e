use std::path::PathBuf;

use tgraphx_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used to pick process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn graph(msg: impl Into<String>) -> Self {
        Error::Graph(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Tensor(TensorError::NonFinite { .. }) | Error::Numeric(_) => ErrorKind::Numeric,
            Error::Tensor(TensorError::NonDeterministic { .. }) => ErrorKind::Numeric,
            Error::Config(_) => ErrorKind::Usage,
            Error::Stage { source, .. } | Error::File { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}

pub(crate) trait Context<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
    fn file(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T, E: Into<Error>> Context<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }

    fn file(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::File {
            path: path.into(),
            source: Box::new(e.into()),
        })
    }
}
