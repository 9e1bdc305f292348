//! Command-line driver for the boxtrack pipeline: scene simulation, tracking,
//! evaluation, and overlay rendering over schema-tagged JSON files.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod overlay;
pub mod schema;

pub use app::run;
pub use config::RunConfig;
pub use error::CliError;
