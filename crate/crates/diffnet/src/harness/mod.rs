//! Configuration, experiment orchestration and file output behind the
//! `diffnet` CLI.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 divergence guard tripped.

pub mod checks;
pub mod commands;
pub mod config;
pub mod plot;

pub use commands::{cmd_check, cmd_policy, cmd_run, cmd_sweep, MetricRow, RunRecord};
pub use config::{build_bundle, ExperimentBundle, ExperimentConfig};

use thiserror::Error;

use crate::engine::EngineError;
use crate::landscape::LandscapeError;
use crate::stationarity::StationarityError;
use crate::topology::TopologyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0} verification checks failed")]
    CheckFailed(usize),
    #[error("divergence guard tripped: {0}")]
    Diverged(EngineError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl HarnessError {
    /// The CLI exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::CheckFailed(_) => 1,
            HarnessError::Config(_) | HarnessError::Internal(_) => 2,
            HarnessError::Diverged(_) => 3,
        }
    }

    pub(crate) fn from_classifier(err: StationarityError) -> Self {
        HarnessError::Config(err.to_string())
    }
}

impl From<TopologyError> for HarnessError {
    fn from(err: TopologyError) -> Self {
        HarnessError::Config(err.to_string())
    }
}

impl From<LandscapeError> for HarnessError {
    fn from(err: LandscapeError) -> Self {
        HarnessError::Config(err.to_string())
    }
}

impl From<EngineError> for HarnessError {
    fn from(err: EngineError) -> Self {
        match err {
            diverged @ EngineError::Diverged { .. } => HarnessError::Diverged(diverged),
            other => HarnessError::Config(other.to_string()),
        }
    }
}
