use std::io;
use std::path::Path;

use thiserror::Error;
use unitary_interp::checkpoint::CheckpointError;
use unitary_interp::dataset::DatasetError;
use unitary_interp::evaluation::EvalError;
use unitary_interp::pauli::PauliError;
use unitary_interp::propagators::PropagatorError;
use unitary_interp::training::TrainError;

/// Failure classes, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Contract(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => CliError::Io(e.to_string()),
            DatasetError::Linalg(_) | DatasetError::Propagator(_) => CliError::Numerical(e.to_string()),
            DatasetError::Grid(_) | DatasetError::Invalid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Graph(_) | TrainError::Optim(_) => {
                CliError::Numerical(e.to_string())
            }
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Dataset(d) => d.into(),
            EvalError::Linalg(_) | EvalError::Propagator(_) => CliError::Numerical(e.to_string()),
            EvalError::Invalid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<PauliError> for CliError {
    fn from(e: PauliError) -> Self {
        CliError::Contract(e.to_string())
    }
}

impl From<PropagatorError> for CliError {
    fn from(e: PropagatorError) -> Self {
        match e {
            PropagatorError::Linalg(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
