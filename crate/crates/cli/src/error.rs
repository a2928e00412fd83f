use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}: {message}")]
    Parse { file: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("method `icode` needs a checkpoint; set `checkpoint_path` or run `train` first")]
    MissingCheckpoint,

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Core(#[from] icode_mppi::Error),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Bench(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// 1 for problems with what the user asked for, 2 for failures while
    /// carrying it out.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) | CliError::MissingCheckpoint | CliError::MissingInput(_) => 1,
            CliError::Core(icode_mppi::Error::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}
