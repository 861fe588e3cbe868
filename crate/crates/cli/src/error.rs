use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("{}: line {line}: {message}", path.display())]
    ConfigSyntax { path: PathBuf, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// A pipeline stage failed; `stage` names the module that raised it.
    #[error("{stage}: {source}")]
    Pipeline { stage: &'static str, source: ttm_core::Error },

    #[error("{}: line {line}: {message}", path.display())]
    Ingest { path: PathBuf, line: u64, message: String },

    #[error("unknown preset {0:?}, expected one of: {1}")]
    UnknownPreset(String, String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::ConfigSyntax { .. } | Self::UnknownPreset(..) => 2,
            Self::Ingest { .. } => 3,
            Self::Io { .. } | Self::Pipeline { .. } => 1,
        }
    }
}

/// Tags core errors with the module they came from.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for ttm_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Pipeline { stage, source })
    }
}
