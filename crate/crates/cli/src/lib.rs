//! File formats, run configuration, experiment protocols and verification
//! suites behind the `fusegp` command-line tool.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod metrics;
pub mod trace;
pub mod verify;

pub use error::{CliError, Result};
