//! Command-line harness for `pomdp-nac-core`: model, controller and policy
//! files, strict experiment configs, seed sweeps with CSV logs, and the
//! diagnostic subcommands.

pub mod commands;
pub mod config;
pub mod csv_out;
pub mod error;
pub mod experiment;
pub mod io;

pub use error::{HarnessError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
