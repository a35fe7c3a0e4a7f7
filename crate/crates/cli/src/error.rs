use std::path::PathBuf;

use serde::Serialize;

use fairgen_core::blackbox::ModelError;
use fairgen_core::data::DataError;
use fairgen_core::lucid_baseline::LucidError;
use fairgen_core::lucidgan::LucidGanError;
use fairgen_core::metrics::MetricsError;
use fairgen_core::transforms::TransformError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing artifact {}; run `{step}` first", path.display())]
    MissingArtifact { path: PathBuf, step: &'static str },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::MissingArtifact { .. } => 5,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Diverged(_) => "divergence",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Io(_) => "io",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

/// Written to stderr as one JSON line and to `error.json` in the output
/// directory.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged(m) => CliError::Diverged(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LucidGanError> for CliError {
    fn from(e: LucidGanError) -> Self {
        match e {
            LucidGanError::Diverged(m) => CliError::Diverged(m),
            LucidGanError::Config(m) => CliError::Config(m),
            LucidGanError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LucidError> for CliError {
    fn from(e: LucidError) -> Self {
        match e {
            LucidError::Config(m) => CliError::Config(m),
            LucidError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
