use bnews_core::estimator::EstimatorError;
use bnews_core::koper::KoperError;
use bnews_core::rdsim::RdsimError;
use bnews_core::setvalued::SetValuedError;
use thiserror::Error;

/// Exit status when a warning scan raised a flag.
pub const EXIT_FLAGGED: i32 = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    /// 1 computation failure, 2 input/output or data format, 3 usage or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) => 1,
            CliError::Io(_) => 2,
            CliError::Usage(_) | CliError::Config(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<RdsimError> for CliError {
    fn from(e: RdsimError) -> Self {
        match e {
            RdsimError::Io(_) | RdsimError::Format(_) => CliError::Io(e.to_string()),
            RdsimError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<SetValuedError> for CliError {
    fn from(e: SetValuedError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<KoperError> for CliError {
    fn from(e: KoperError) -> Self {
        match e {
            KoperError::Io(_) => CliError::Io(e.to_string()),
            KoperError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}
