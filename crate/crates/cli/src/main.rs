mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Marks an error caused by bad flags or configuration rather than by the run
/// itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "quadlat",
    version,
    about = "Latent-space stabilisation and gait planning for a simulated quadruped"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML file layered between built-in defaults and flags.
    #[arg(long, global = true, help_heading = "Global options")]
    pub config: Option<PathBuf>,
    /// Robot parameter file (TOML or JSON).
    #[arg(long, global = true, help_heading = "Global options")]
    pub params: Option<PathBuf>,
    /// Worker threads for data-parallel jobs.
    #[arg(long, global = true, help_heading = "Global options", env = "QUADLAT_WORKERS")]
    pub workers: Option<usize>,
    /// Run batch jobs on the calling thread.
    #[arg(long, global = true, help_heading = "Global options")]
    pub sequential: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true, help_heading = "Global options")]
    pub force: bool,
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true, help_heading = "Global options")]
    pub json_errors: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a labelled dataset and split it into train and test parts.
    GenData(commands::GenData),
    /// Train the VAE with stability and stance heads.
    Train(commands::Train),
    /// Train the feed-forward classifier used by input-space AM.
    TrainBaseline(commands::TrainBaseline),
    /// Latent-AM versus input-AM stabilisation study over stability margins.
    Stabilize(commands::Stabilize),
    /// Plan a gait cycle by trajectory optimisation in latent space.
    Walk(commands::Walk),
    /// Check a planned gait trajectory.
    Eval(commands::Eval),
    /// Time the learned predictor against the analytical oracle.
    Bench(commands::Bench),
    /// Latent-space diagnostics on the test split of a dataset.
    Diag(commands::Diag),
}

fn report(err: &anyhow::Error, code: u8, json: bool) {
    if json {
        let body = serde_json::json!({
            "error": {
                "kind": if code == EXIT_USAGE { "usage" } else { "runtime" },
                "message": format!("{err:#}"),
                "exit_code": code,
            }
        });
        eprintln!("{body}");
    } else {
        eprintln!("error: {err:#}");
    }
}

fn main() -> ExitCode {
    let json_requested = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_requested {
                report(&anyhow::anyhow!(e.to_string().trim().to_string()), EXIT_USAGE, true);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let json = cli.global.json_errors;
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = if err.chain().any(|c| c.is::<UsageError>()) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            };
            report(&err, code, json);
            ExitCode::from(code)
        }
    }
}
