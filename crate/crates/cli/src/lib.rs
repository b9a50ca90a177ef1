//! Command-line front end for the reconstruction toolkit.

pub mod commands;
pub mod config;
pub mod manifest;

use clap::{Parser, Subcommand};

/// Exit status for configuration and argument errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for unreadable or malformed files.
pub const EXIT_IO: i32 = 3;
/// Exit status when training diverges.
pub const EXIT_DIVERGENCE: i32 = 4;

/// Environment variable holding the default worker-thread cap.
pub const THREADS_ENV: &str = "IMLS_SDF_THREADS";

#[derive(Parser, Debug)]
#[command(name = "imls-sdf", version, about = "Reconstruct signed distance fields from raw point clouds")]
pub struct Cli {
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    pub threads: usize,
    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a field on a point cloud and extract its zero level set.
    Reconstruct(commands::ReconstructArgs),
    /// Compare a reconstructed mesh against a reference surface.
    Evaluate(commands::EvaluateArgs),
    /// Train several ablation variants on one cloud and tabulate their metrics.
    Ablate(commands::AblateArgs),
    /// Train on a 2D outline and write contour snapshots.
    Demo2d(commands::Demo2dArgs),
}

/// Maps an error chain onto the documented exit statuses.
pub fn exit_code(error: &anyhow::Error) -> i32 {
    use imls_sdf::Error;
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_) => EXIT_IO,
                Error::Divergence { .. } => EXIT_DIVERGENCE,
                Error::Config(_)
                | Error::Input(_)
                | Error::Shape(_)
                | Error::EmptyInput(_)
                | Error::DegenerateExtent => EXIT_CONFIG,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    match &cli.command {
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Demo2d(a) => commands::demo2d(a),
    }
}
