//! Command-line harness for equipotential learning: `.eplt` tensor and PGM
//! label files, JSON experiment configs, and the training, evaluation and
//! ablation drivers behind the `epl` binary.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
