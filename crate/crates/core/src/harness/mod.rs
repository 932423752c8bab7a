//! Experiment orchestration: configs, sweeps, trajectories, scaling runs and CSV output.

pub mod config;
pub mod experiment;
pub mod output;
pub mod sweep;

pub use config::RunConfig;
pub use experiment::{run_agent_scaling, run_trajectory, Experiment, ScalingRow};
pub use sweep::{run_sweep, SweepResult, SweepRow};
