//! Experiment driver for `dplis-core`: configuration files, dataset loading,
//! multi-seed runs and their CSV/JSON outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod output;
pub mod pate;
pub mod toy;

pub use config::{ExperimentConfig, Task};
pub use error::{HarnessError, Result};
