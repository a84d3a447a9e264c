//! Random-MDP benchmark harness for offline imitation from observation.
//!
//! A grid cell is `(beta, n_e, n_i, algorithm, seed)`: a random MDP with transition
//! stochasticity `beta`, `n_e` state-only expert transitions, `n_i` action-labeled transitions
//! from a uniformly random policy, and one of BC, BCO, DemoDICEfO, OPOLO or LobsDICE. The
//! score is the total variation between the state-transition occupancies of the learned
//! policy and the expert, both computed exactly under the true MDP.

pub mod config;
pub mod grid;
pub mod oracle;
pub mod report;
pub mod run;
pub mod verify;

use std::path::{Path, PathBuf};

pub use config::{Algorithm, ExperimentConfig};
pub use grid::{run_grid, run_grid_with, Execution, GridOutput};
pub use report::{aggregate, SummaryRow};
pub use run::{run_cell, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Core(#[from] ifo_core::Error),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io { path: path.to_path_buf(), source }
    }
}
