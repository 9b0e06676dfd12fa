//! Command-line front end of the `icpm` library.
//!
//! Configurations are single JSON documents. The commands write `#`-commented
//! CSV tables and JSON reports that carry the config hash, tool version and
//! tolerances, and identical inputs give byte-identical outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::CliError;
