//! Command-line front end for `multiassign-core`: layered configuration,
//! text checkpoints, CSV and SVG reports, a thread-parallel ablation grid
//! and the oracle self-test suites.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid;
pub mod report;
pub mod selftest;

pub use config::RunConfig;
pub use error::{AppError, AppResult};
