//! Error classification and process exit codes.

use std::fmt;

use portopt::analytics::AnalyticsError;
use portopt::backtest::BacktestError;
use portopt::forecaster::ForecastError;
use portopt::ingest::IngestError;
use portopt::optimizer::OptimizerError;

/// Command failures, grouped by exit code: config errors exit 2, data errors
/// exit 3, runtime numeric errors exit 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Data error pointing at the missing artifact and the command that
    /// produces it.
    pub fn missing_artifact(path: &std::path::Path, producer: &str) -> Self {
        CliError::Data(format!(
            "missing artifact {}; run `portopt {producer}` first",
            path.display()
        ))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::Checkpoint { .. } | ForecastError::CheckpointVersion { .. } => {
                CliError::Data(e.to_string())
            }
            ForecastError::BadConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::MissingPrice(_)
            | BacktestError::MissingPredicted(_)
            | BacktestError::EmptyInput => CliError::Data(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
