//! Operator CLI for the scene-memory navigation agent.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
//! 3 acceptance-threshold failure (grad-check, ablate ordering).

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::ThresholdFailure;
use ssm_nav::planner::DecisionMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ssm-nav",
    about = "Scene-memory navigation: datasets, training, evaluation, ablations",
    version
)]
struct Cli {
    /// Structured TOML config file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.lr=0.001 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate environments into <out>/envs.jsonl.
    GenEnv {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate episodes for existing environments.
    GenEpisodes {
        #[arg(long)]
        envs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy; writes best/final checkpoints and the curve CSV.
    Train {
        #[arg(long)]
        envs: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        eval_envs: Option<PathBuf>,
        #[arg(long)]
        eval_episodes: Option<PathBuf>,
        /// Resume from an existing checkpoint (continues epoch numbering).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint; writes report.json and report.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        envs: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        /// Decision mode override: frontier, global-onestep, or local.
        #[arg(long)]
        mode: Option<DecisionMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out one episode greedily; writes trajectory logs and an SVG.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        envs: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        episode_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient verification; exit 3 above threshold.
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// Deliberately corrupt the analytic gradient (must then fail).
        #[arg(long)]
        corrupt: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and compare the decision modes and module toggles.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::load_config(cli.config.as_deref(), &cli.overrides)
        .map_err(|e| e.context("config error"))?;
    match cli.command {
        Command::GenEnv { out } => commands::gen_env(&cfg, &out),
        Command::GenEpisodes { envs, out } => commands::gen_episodes(&cfg, &envs, &out),
        Command::Train {
            envs,
            episodes,
            eval_envs,
            eval_episodes,
            resume,
            out,
        } => commands::train(
            &cfg,
            &envs,
            &episodes,
            eval_envs.as_deref(),
            eval_episodes.as_deref(),
            resume.as_deref(),
            &out,
        ),
        Command::Eval {
            checkpoint,
            envs,
            episodes,
            mode,
            out,
        } => commands::eval(&cfg, &checkpoint, &envs, &episodes, mode, &out),
        Command::Rollout {
            checkpoint,
            envs,
            episodes,
            episode_id,
            out,
        } => commands::rollout(&cfg, &checkpoint, &envs, &episodes, episode_id, &out),
        Command::GradCheck {
            threshold,
            corrupt,
            out,
        } => commands::grad_check_cmd(&cfg, threshold, corrupt, &out),
        Command::Ablate { out } => commands::ablate(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // usage error.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ThresholdFailure>().is_some() {
                ExitCode::from(3)
            } else if e.to_string().starts_with("config error") {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
