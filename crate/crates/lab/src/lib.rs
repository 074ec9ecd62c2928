//! Experiment harness around `float-core`: dataset and checkpoint files,
//! JSON configuration, training runs, λ_n sweeps and cost reports.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod report;
pub mod run;
pub mod synth;

pub use error::{LabError, Result};
