use std::path::PathBuf;

use stnmf::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config file {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("missing input: {path} does not exist")]
    MissingInput { path: PathBuf },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: stnmf::Error,
    },

    #[error("period {period}: {source}")]
    Period {
        period: String,
        #[source]
        source: stnmf::Error,
    },

    #[error(transparent)]
    Core(#[from] stnmf::Error),
}

impl CliError {
    /// 0 is success; 1 usage or config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        let kind = match self {
            CliError::Usage(_) | CliError::Config { .. } => return 1,
            CliError::MissingInput { .. } => return 2,
            CliError::File { source, .. } | CliError::Period { source, .. } => source.kind(),
            CliError::Core(e) => e.kind(),
        };
        match kind {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: impl Into<stnmf::Error>) -> Self {
        CliError::File {
            path: path.into(),
            source: source.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
