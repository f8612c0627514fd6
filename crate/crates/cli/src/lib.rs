//! Command-line front end for the multi-view uncertainty pipeline: TOML
//! configuration, artifact files with provenance, and the stage drivers
//! behind each subcommand.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod provenance;
pub mod stages;

pub use error::CliError;
