use mambatab::model::ModelError;
use mambatab::tabular::TabularError;
use mambatab::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable inputs, malformed config or schema.
    #[error("{0}")]
    Config(String),
    /// Numeric failure or an output that could not be written.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

impl From<TabularError> for CliError {
    fn from(e: TabularError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Metric(_) => CliError::Runtime(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
