//! Experiment harness behind the `foac` binary.
//!
//! Each experiment module exposes a serde config with working defaults, a
//! `run` function returning the report plus raw traces, and a `write`
//! function producing `<name>_summary.json`, `<name>.csv` and `timing.json`.

pub mod app;
pub mod cache_cmd;
pub mod error;
pub mod fig8;
pub mod hover;
pub mod random_bench;
pub mod report;
pub mod setup;

pub use error::{CliError, Result};
