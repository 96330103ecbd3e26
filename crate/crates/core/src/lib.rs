//! Core library: agent loop, prompt handling, simulated environments,
//! layered strategies, and trajectory metrics.

#![forbid(unsafe_code)]

pub mod agent;
pub mod envs;
pub mod eval;
pub mod history;
pub mod llm;
pub mod strategies;
pub mod types;

pub use types::{
    deserialize_trajectory, read_trajectory_lines, serialize_trajectory, write_trajectory_lines,
    EnvFamily, Framework, HistoryPolicy, Outcome, PredictedOutcome, Retention, Step, Trajectory,
    TrajectoryError,
};
