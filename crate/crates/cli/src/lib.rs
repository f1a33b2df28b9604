//! Command-line front end and experiment harness for the `glt` library.

pub mod commands;
pub mod experiment;
pub mod io;
pub mod metrics;

pub use commands::{run, Cli};
pub use io::{CliError, CliResult};
