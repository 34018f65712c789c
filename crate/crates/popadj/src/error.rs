use std::io;
use std::path::PathBuf;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("{path}: row {row}, column {column}: {msg}")]
    Value { path: PathBuf, row: usize, column: String, msg: String },
    #[error("{path}: row {row}, column {column} is missing")]
    MissingData { path: PathBuf, row: usize, column: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Config(String),
    #[error("{method}: {source}")]
    Estimation { method: String, source: popadj_core::Error },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema { .. } => "SchemaError",
            CliError::Value { .. } => "ValueError",
            CliError::MissingData { .. } => "MissingDataError",
            CliError::Io { .. } => "IoError",
            CliError::Json { .. } => "JsonError",
            CliError::Csv { .. } => "CsvError",
            CliError::Config(_) => "ConfigError",
            CliError::Estimation { source, .. } => source.kind(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Estimation { method, .. } = self {
            v["method"] = json!(method);
        }
        v
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn in_method(method: &str) -> impl FnOnce(popadj_core::Error) -> CliError + '_ {
        move |source| CliError::Estimation { method: method.into(), source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
