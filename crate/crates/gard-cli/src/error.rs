//! Error-to-exit-code mapping. Every failure prints one machine-parsable
//! line: `error: <kind>: <message>`.

use std::fmt;
use std::path::PathBuf;

use gard_core::corpus::CorpusError;
use gard_core::model::ModelError;
use gard_core::training::TrainError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config values. Exit code 2.
    Usage(String),
    /// A referenced file does not exist. Exit code 3.
    MissingFile(PathBuf),
    /// Corpus or checkpoint failed validation. Exit code 4.
    Schema(String),
    /// Anything else (divergence, io). Exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Schema(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingFile(_) => "missing-file",
            CliError::Schema(_) => "schema",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Schema(msg) | CliError::Runtime(msg) => {
                f.write_str(msg)
            }
            CliError::MissingFile(path) => write!(f, "{} does not exist", path.display()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::Io { path, source } => {
                if source.kind() == std::io::ErrorKind::NotFound {
                    CliError::MissingFile(PathBuf::from(path))
                } else {
                    CliError::Runtime(e.to_string())
                }
            }
            _ => CliError::Schema(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::Io { path, source } => {
                if source.kind() == std::io::ErrorKind::NotFound {
                    CliError::MissingFile(PathBuf::from(path))
                } else {
                    CliError::Runtime(e.to_string())
                }
            }
            ModelError::Parse(_) | ModelError::ShapeDrift { .. } | ModelError::MissingTensor(_) => {
                CliError::Schema(e.to_string())
            }
            ModelError::Kernel(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::Config(msg) => CliError::Usage(msg.clone()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
