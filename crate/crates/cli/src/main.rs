use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use droneam::agents::Algorithm;
use droneam::config::RunConfig;
use droneam_cli::{cmd_demo, cmd_eval, cmd_train, format_summary};

#[derive(Parser)]
#[command(
    name = "droneam",
    version,
    about = "DDPG/TD3 waypoint navigation for deposition drones"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write logs and checkpoints.
    Train {
        /// TOML run configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// Dotted-key override, e.g. `--set agent.discount=0.95`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint with the test protocol.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1_000_000)]
        seed: u64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Fly one multi-waypoint episode and export its trajectory.
    Demo {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 6)]
        waypoints: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            algorithm,
            overrides,
        } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            if let Some(a) = algorithm {
                cfg.agent.algorithm = a;
            }
            let cfg = cfg.with_overrides(&overrides)?;
            let report = cmd_train(&cfg)?;
            println!(
                "trained {} episodes ({} successful); checkpoint {}",
                report.episodes.len(),
                report.success_count(),
                report.checkpoint.display()
            );
            if let Some(stage) = report.final_stage {
                println!("final stage {stage}");
            }
        }
        Command::Eval {
            checkpoint,
            trials,
            seed,
            out,
        } => {
            let report = cmd_eval(&checkpoint, trials, seed, &out)?;
            println!("{}", format_summary(&report.summary));
        }
        Command::Demo {
            checkpoint,
            waypoints,
            seed,
            out,
        } => {
            let record = cmd_demo(&checkpoint, waypoints, seed, &out)?;
            println!(
                "{} after {} steps, {} of {waypoints} waypoints, final error {:.4} m",
                record.status.as_str(),
                record.steps,
                record.waypoints,
                record.final_error
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
