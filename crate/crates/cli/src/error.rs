use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] romelab_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed artifact: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {path}: run `{command}` first")]
    Missing { path: PathBuf, command: &'static str },

    #[error("mismatched artifacts: {0}")]
    Mismatch(String),

    #[error("no known prompts: the model recalls none of the world's facts")]
    NoKnownPrompts,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(_) => "core",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
            CliError::Config(_) => "config",
            CliError::Missing { .. } => "missing_artifact",
            CliError::Mismatch(_) => "mismatch",
            CliError::NoKnownPrompts => "no_known_prompts",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}
