//! Error type shared by every module, with stable machine-readable categories
//! for the CLI.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CrumError>;

/// All failure modes of the library.
#[derive(Debug, Error)]
pub enum CrumError {
    /// Malformed input text (LETOR lines, archives).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally valid input that violates the dataset schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Argument outside an operation's domain (bad permutation, bad position).
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values or other numeric breakdowns.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training could not run or converge as contracted.
    #[error("training error: {0}")]
    Training(String),

    /// A pipeline stage was invoked before the stage that produces its input.
    #[error("dependency error: stage '{missing}' must run before '{requested}': {message}")]
    Dependency {
        requested: String,
        missing: String,
        message: String,
    },

    /// Deliberate refusal to run an operation outside its safe envelope
    /// (e.g. exhaustive permutation search above the list-length cap).
    #[error("refusal: {0}")]
    Refusal(String),

    /// Report generation asked for with no completed runs.
    #[error("empty report: {0}")]
    EmptyReport(String),

    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Serialization failure in an archive or checkpoint.
    #[error("serialization error: {0}")]
    Serde(String),
}

impl CrumError {
    /// Stable category string for machine-readable CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            CrumError::Parse { .. } => "parse",
            CrumError::Schema(_) => "schema",
            CrumError::Config(_) => "config",
            CrumError::Domain(_) => "domain",
            CrumError::Numeric(_) => "numeric",
            CrumError::Training(_) => "training",
            CrumError::Dependency { .. } => "dependency",
            CrumError::Refusal(_) => "refusal",
            CrumError::EmptyReport(_) => "empty-report",
            CrumError::Io(_) => "io",
            CrumError::Serde(_) => "serialization",
        }
    }

    /// Stable nonzero process exit code per category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CrumError::Config(_) => 2,
            CrumError::Dependency { .. } => 3,
            CrumError::Parse { .. } => 4,
            CrumError::Schema(_) => 5,
            CrumError::Domain(_) => 6,
            CrumError::Numeric(_) => 7,
            CrumError::Training(_) => 8,
            CrumError::Refusal(_) => 9,
            CrumError::EmptyReport(_) => 10,
            CrumError::Io(_) => 11,
            CrumError::Serde(_) => 12,
        }
    }
}

impl From<serde_json::Error> for CrumError {
    fn from(e: serde_json::Error) -> Self {
        CrumError::Serde(e.to_string())
    }
}

impl From<csv::Error> for CrumError {
    fn from(e: csv::Error) -> Self {
        CrumError::Serde(e.to_string())
    }
}
