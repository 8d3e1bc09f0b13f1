//! Experiment orchestration: closed-loop episodes, safe seeding, the tuning
//! campaign and its on-disk log.

mod campaign;
mod config;
mod episode;

use thiserror::Error;

pub use campaign::{
    generate_safe_seed, load_run_log, replay, simulate, tune, tune_with_progress, write_run_log, EpisodeRecord, IterationRecord,
    Phase, RunHeader, RunLog, SeedSet, SeedSetSummary, Summary,
};
pub use config::{diag, to_matrix, AcquisitionConfig, EnvelopeConfig, ExperimentConfig, Mat4, ThetaBox};
pub use episode::{
    evaluate_trajectory, performance, read_episode_csv, run_episode, write_episode_csv, Episode, SolverStats, Truncation,
    EPISODE_HEADER,
};

/// `G_0` assigned to runs that did not finish.
pub const SENTINEL_COST: f64 = 1e12;

/// Largest accepted deviation between stored and recomputed `G_0`, `G_1`.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("safety precondition failed: {0}")]
    Unsafe(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("optimizer error: {0}")]
    Bo(#[from] crate::safe_bo::BoError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Dimension(_) => 2,
            HarnessError::Unsafe(_) => 3,
            HarnessError::Integrity(_) => 4,
            HarnessError::Bo(_) | HarnessError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
