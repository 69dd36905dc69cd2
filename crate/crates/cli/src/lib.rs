//! Configuration, orchestration and reporting for the market-entry
//! experiments. The `entry-lab` binary is a thin wrapper around [`run::run`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod report;
pub mod run;

pub use config::{ConfigError, ExperimentConfig};
pub use run::{run, Command, Outcome, RunError};

/// Process exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
