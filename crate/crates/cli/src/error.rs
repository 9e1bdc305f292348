use std::path::PathBuf;

use thiserror::Error;

/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status when a track was lost; partial output is still written.
pub const EXIT_TRACKING_LOST: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Document { path: PathBuf, message: String },
    #[error("missing {0}: pass the flag or set it under `paths` in the config")]
    MissingPath(&'static str),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_USAGE
    }
}
