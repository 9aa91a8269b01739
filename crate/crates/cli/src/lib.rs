//! Config loading and subcommands behind the `esrnn` binary.

pub mod commands;
pub mod config;

pub use commands::{cmd_benchmark, cmd_evaluate, cmd_forecast, cmd_prepare, cmd_train, Dataset, Manifest};
pub use config::RunConfig;
