//! Experiment runners over the stability lab: the square-root-loss divergence
//! simulation, the gradient-scale and epsilon sweeps, the sparse-variance NaN
//! table, full-pipeline gradient verification, and configuration auditing
//! against the stability guidelines — all behind the `stabbench` CLI with
//! CSV/JSON/SVG reporting.

pub mod audit;
pub mod config;
pub mod gradcheck;
pub mod monitor;
pub mod pipeline;
pub mod report;
pub mod runners;
mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Step(#[from] pipeline::StepError),
}
