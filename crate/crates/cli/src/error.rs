use std::path::Path;

use oscd_core::calibrate::CalibrateError;
use oscd_core::communities::CommunityError;
use oscd_core::ingest::IngestError;
use oscd_core::robustness::RobustnessError;
use oscd_core::scoring::ScoringError;
use oscd_core::synthetic::SyntheticError;
use thiserror::Error;

/// Process exit codes, one per error class.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const VALIDATION: i32 = 4;
    pub const INFEASIBLE: i32 = 5;
    pub const IO: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("io: {0}")]
    IoMessage(String),
    #[error("missing input {path}: {hint}")]
    MissingInput { path: String, hint: String },
    #[error("parse: {0}")]
    Parse(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } | CliError::IoMessage(_) | CliError::MissingInput { .. } => exit::IO,
            CliError::Parse(_) => exit::PARSE,
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Infeasible(_) => exit::INFEASIBLE,
            CliError::Other(_) => exit::OTHER,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(_) => CliError::IoMessage(e.to_string()),
            IngestError::Parse { .. } | IngestError::MissingHeader | IngestError::Version { .. } => {
                CliError::Parse(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::TableParse { .. } => CliError::Parse(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CommunityError> for CliError {
    fn from(e: CommunityError) -> Self {
        match e {
            CommunityError::Manifest(_) => CliError::Parse(e.to_string()),
            CommunityError::InvalidSpec(_) => CliError::Config(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        match e {
            CalibrateError::Infeasible { .. }
            | CalibrateError::NoValidationUnknowns { .. }
            | CalibrateError::NoValidationCommunityUnknowns { .. } => CliError::Infeasible(e.to_string()),
            CalibrateError::Invariant(_) => CliError::Other(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RobustnessError> for CliError {
    fn from(e: RobustnessError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        CliError::Config(e.to_string())
    }
}
