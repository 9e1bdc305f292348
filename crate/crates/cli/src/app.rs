//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "boxtrack",
    version,
    about = "Track 9-DoF boxes from keypoint detections and plane motion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON). Absent fields take the defaults listed below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory for per-frame PPM overlays.
    #[arg(long, global = true)]
    pub overlay: Option<PathBuf>,
    /// Log progress (debug level unless BOXTRACK_LOG is set).
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with detections.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the tracking pipeline over a scene and write a pose stream.
    Track {
        #[command(flatten)]
        common: Common,
        /// Scene document produced by `simulate`.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Score a pose stream against its scene's ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Pose stream produced by `track`.
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Draw a pose stream's wireframes into per-frame PPM images.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        poses: Option<PathBuf>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate { common } | Command::Track { common, .. } => common,
            Command::Eval { common, .. } | Command::Render { common, .. } => common,
        }
    }
}

fn command() -> clap::Command {
    let defaults = format!(
        "Configuration defaults (every field optional; `schema` may be set to \"{}\"):\n{}\n\n\
         Exit status: 0 on success, 2 on usage or configuration errors, 3 when a track was lost \
         (outputs are still written).\nLog level: BOXTRACK_LOG (e.g. BOXTRACK_LOG=debug).",
        crate::schema::SCHEMA,
        RunConfig::defaults_json()
    );
    Cli::command().after_long_help(defaults)
}

/// Parse arguments, or return clap's error (which carries exit status 2).
pub fn parse<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

/// Execute a parsed command and return the process exit status.
pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let common = cli.command.common();
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    let out = common.out.as_deref();
    let overlay = common.overlay.as_deref();
    match &cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg, out),
        Command::Track { scene, .. } => commands::track(&cfg, scene.as_deref(), out, overlay),
        Command::Eval { poses, scene, .. } => commands::eval(&cfg, poses.as_deref(), scene.as_deref(), out),
        Command::Render { poses, .. } => commands::render(&cfg, poses.as_deref(), overlay),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_defaults() {
        let help = command().render_long_help().to_string();
        assert!(help.contains("\"consolidation_iou\": 0.5"), "{help}");
        assert!(help.contains("\"cadence\": 5"));
        assert!(help.contains("BOXTRACK_LOG"));
    }

    #[test]
    fn flags_parse_after_subcommand() {
        let cli = parse([
            "boxtrack", "track", "--scene", "s.json", "--out", "p.json", "--seed", "4",
        ])
        .unwrap();
        assert_eq!(cli.command.common().seed, Some(4));
        assert!(matches!(cli.command, Command::Track { scene: Some(_), .. }));
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        let err = parse(["boxtrack", "fly"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
