//! GEVD-based low-rank channel covariance estimation and approximate MMSE
//! channel estimation for massive MIMO uplink with random pilot allocation.
//!
//! The pipeline is `channel` (geometry and covariances) → `airlink`
//! (pilots, noise, received blocks) → `covest` (sample and low-rank
//! covariance estimates) → `estimators` (channel estimation filters) →
//! `harness` (Monte-Carlo NMSE sweeps). `cli` wraps the harness.

pub mod airlink;
pub mod channel;
pub mod cli;
pub mod config;
pub mod covest;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod rng;

pub use config::{EstimatorKind, EstimatorSpec, ExperimentConfig, SweepVariable, SystemConfig};
pub use covest::LowRankCovEstimate;
pub use harness::{run_single, run_sweep, NmseResult, ResultTable};
pub use linalg::{gevd, CMatrix, CVector, HermitianMatrix};
