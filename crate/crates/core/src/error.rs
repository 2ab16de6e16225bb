use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AheadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AheadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed row or value inside a data file.
    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid graph: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Failure of one stage of a multi-stage run.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AheadError>,
    },
}

impl AheadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AheadError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        AheadError::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        AheadError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            AheadError::Config(_) => 1,
            AheadError::Numerical(_) => 3,
            AheadError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
