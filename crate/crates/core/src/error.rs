use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged: {message}")]
    Training { message: String, trace: Vec<f64> },

    #[error("data error: {0}")]
    Data(String),

    #[error("coalition size {0} exceeds the exact engine limit of 20 players; use sampled_shapley")]
    Size(usize),

    #[error("network error: {0}")]
    Net(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn training(message: impl Into<String>, trace: Vec<f64>) -> Self {
        Error::Training {
            message: message.into(),
            trace,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 training, 5 network.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Schema(_) | Error::Artifact(_) | Error::Size(_) => 2,
            Error::Parse { .. } | Error::Io { .. } | Error::Data(_) | Error::Shape { .. } => 3,
            Error::Training { .. } | Error::Numeric(_) | Error::State(_) => 4,
            Error::Net(_) => 5,
            Error::Stage { .. } => unreachable!("root() strips stage tags"),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape { expected, actual })
    }
}
