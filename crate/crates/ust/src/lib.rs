//! File formats, query runner and experiment harness around `ust-core`.

pub mod bench;
pub mod calibrate;
pub mod error;
pub mod format;
pub mod io;
pub mod runner;
pub mod workload;

pub use error::{CliError, Result};
