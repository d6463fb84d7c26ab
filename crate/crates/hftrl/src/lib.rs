//! File formats, pipeline stages and the command-line front end for
//! `hftrl-core`.
//!
//! Every stage reads one [`config::RunConfig`] and writes into its output
//! directory: `manifest.json` from `sample`, `checkpoints/` and `logs/` from
//! `train`, `tuning/` from `tune` and `report/` from `test`, each alongside a
//! `run_<command>.json` record of the seeds and configuration hash used.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{AppError, AppResult};
