//! Configuration, experiment orchestration, artifact emission and the
//! acceptance runner behind the command-line tool.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod plot;

use std::path::Path;

use thiserror::Error;

use crate::bounds::BoundsError;
use crate::gossip::GossipError;
use crate::objective::ObjectiveError;
use crate::simulator::SimError;
use crate::splitting::SplittingError;
use crate::topology::TopologyError;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("unsupported schema_version {0}")]
    UnsupportedSchema(u32),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Splitting(#[from] SplittingError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Gossip(#[from] GossipError),
}

impl HarnessError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }

    /// A one-line hint on how to fix the input.
    pub fn remediation(&self) -> &'static str {
        match self {
            Self::ConfigParse(_) => "check the TOML syntax and remove keys the schema does not define",
            Self::UnsupportedSchema(_) => "set schema_version = 1",
            Self::Io { .. } => "check that the path exists and is readable; relative paths resolve against the config file's directory",
            Self::Invalid(_) => "fix the offending field named above",
            Self::Topology(TopologyError::NotRowStochastic { .. }) => "make every row of W sum to 1",
            Self::Topology(TopologyError::NotSymmetric { .. }) => "W must equal its transpose",
            Self::Topology(TopologyError::DisconnectedGraph { .. }) => "add edges until the graph is connected",
            Self::Topology(TopologyError::DiagonalOutOfRange { .. } | TopologyError::WeightOutOfRange(_)) => {
                "every W_ii must lie strictly between 0 and 1; for laplacian weights use kappa < 1 / max degree"
            }
            Self::Topology(TopologyError::SparsityMismatch { .. }) => "W_ij must be positive exactly on the edges",
            Self::Topology(_) => "fix the network description",
            Self::Objective(_) => "check alpha and the per-agent builder parameters",
            Self::Splitting(_) => "the reference solve failed; check that the local functions are strongly convex",
            Self::Sim(SimError::StepsizeInadmissible { .. }) | Self::Bounds(BoundsError::EpsilonTooLarge { .. }) => {
                "lower newton.epsilon below the reported limit, or set newton.policy = \"unchecked\""
            }
            Self::Sim(_) | Self::Bounds(_) => "check the run settings",
            Self::Gossip(_) => "check the [gossip] section",
        }
    }
}

/// Writes `content` to `path`, creating parent directories.
pub fn write_file(path: &Path, content: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, content).map_err(|e| HarnessError::io(path, e))
}
