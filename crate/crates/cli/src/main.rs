//! `uwsn`: train, sweep, evaluate and compare power-allocation policies.
//!
//! Exit codes: 0 success, 1 run failure, 2 configuration error,
//! 3 artifact error.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{PolicyKind, Run};
use error::CliError;

#[derive(Parser)]
#[command(name = "uwsn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML), or a `manifest.json` from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation and sweep cells.
    #[arg(long, env = "UWSN_WORKERS", default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, with the curriculum when `[curriculum]` is set.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Grid search over curriculum thresholds and learning factors.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides the training episodes of each cell.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate one policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "icrl")]
        policy: PolicyKind,
        /// Checkpoint directory; required for `icrl`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides the number of evaluation episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write one slot trace per episode.
        #[arg(long)]
        traces: bool,
    },
    /// Evaluate the trained model and every baseline on shared seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn prepare(common: Common, edit: impl FnOnce(&mut config::ResolvedConfig)) -> Result<Run, CliError> {
    let mut cfg = config::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    edit(&mut cfg);
    cfg.validate()?;
    if common.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    Ok(Run {
        config: cfg,
        out: common.out,
        workers: common.workers,
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, episodes } => {
            let run = prepare(common, |c| {
                if let Some(n) = episodes {
                    c.trainer.episodes = n;
                }
            })?;
            commands::train_cmd(&run)
        }
        Command::Sweep { common, episodes } => {
            let run = prepare(common, |c| {
                if let Some(n) = episodes {
                    c.trainer.episodes = n;
                }
            })?;
            commands::sweep_cmd(&run)
        }
        Command::Eval {
            common,
            policy,
            model,
            episodes,
            traces,
        } => {
            let run = prepare(common, |c| {
                if let Some(n) = episodes {
                    c.eval.episodes = n;
                }
            })?;
            commands::eval_cmd(&run, policy, model.as_deref(), traces)
        }
        Command::Compare { common, model, episodes } => {
            let run = prepare(common, |c| {
                if let Some(n) = episodes {
                    c.eval.episodes = n;
                }
            })?;
            commands::compare_cmd(&run, &model)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uwsn: {e}");
            e.exit_code()
        }
    }
}
