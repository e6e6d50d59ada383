//! Experiment runner for memvisco: structured-text configs in, CSV reports,
//! a manifest and a plot script out.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{parse_config, ConfigErrors, ExperimentConfig, Mode, Tolerances};
pub use experiment::{exit, run_experiment, Outcome, Verdict};
