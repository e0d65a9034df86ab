//! Command-line front end for `safescout`: experiment configs, Monte Carlo
//! batches, and the file formats every subcommand reads and writes.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

pub use error::CliError;
