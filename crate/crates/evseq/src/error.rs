use std::path::{Path, PathBuf};

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    /// Structural problem in an input file, located by a field path.
    #[error("{path}: {field}: {message}")]
    Schema { path: PathBuf, field: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] evseq_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json { path: path.to_path_buf(), source }
    }

    pub fn schema(path: &Path, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema { path: path.to_path_buf(), field: field.into(), message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Schema { .. } => "schema",
            Error::Config(_) => "config",
            Error::Core(evseq_core::Error::NonFiniteLoss { .. }) => "non_finite_loss",
            Error::Core(_) => "core",
        }
    }

    /// The one-line JSON object the CLI prints on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<String>,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
        }
        let (path, field) = match self {
            Error::Io { path, .. } | Error::Json { path, .. } => (Some(path.display().to_string()), None),
            Error::Schema { path, field, .. } => (Some(path.display().to_string()), Some(field.as_str())),
            _ => (None, None),
        };
        let r = Report { error: self.kind(), message: self.to_string(), path, field };
        serde_json::to_string(&r).expect("plain strings serialise")
    }
}
