//! `clickseg`: pipelines for click-driven mask annotation.
//!
//! Exit status: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Agents, Common};

#[derive(Parser, Debug)]
#[command(name = "clickseg", version, about = "Click-driven mask annotation pipelines")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic task set (images, targets, manifest.json).
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expert trajectories for every task, one JSONL line per task.
    GenTraj {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render supervised samples (composite PPM, prompt, target) from trajectories.
    RenderSft {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Prompt template id.
        #[arg(long)]
        template: Option<String>,
        /// Leave out the current-IoU line in targets.
        #[arg(long)]
        no_prm_supervision: bool,
    },
    /// Greedy policy rollouts, one JSONL line per task.
    Rollout {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        agents: Agents,
    },
    /// StaR / StaR+ improvement iterations with an external training hook.
    Star {
        #[arg(long)]
        tasks: PathBuf,
        /// Seed trajectory dataset (JSONL).
        #[arg(long)]
        d0: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// star or star-plus.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        tau_star: Option<f64>,
        /// Shell command containing {dataset}; omitted means emit only.
        #[arg(long)]
        hook: Option<String>,
        /// strict (ΔR > 0) or tau-diff (ΔR >= tau_diff).
        #[arg(long)]
        retain: Option<String>,
        #[command(flatten)]
        agents: Agents,
    },
    /// PRM-guided greedy search on every task.
    Search {
        #[arg(long)]
        tasks: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Directory for the best mask of each task ({id}.pgm).
        #[arg(long)]
        masks_out: Option<PathBuf>,
        /// Run exactly max-steps steps, no early stop.
        #[arg(long)]
        fixed_steps: bool,
        #[command(flatten)]
        agents: Agents,
    },
    /// Metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve /v1/segment, /v1/act and /v1/score backed by the oracles.
    ServeMock {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Cumulative IoU over same-named PGM masks in two directories.
    Ciou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Clicks the expert needs to reach a target IoU, per task.
    Noc {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        target_iou: Option<f64>,
        #[arg(long)]
        cap: Option<usize>,
        /// Also write the click-count histogram as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// MAE/MSE/Pearson/Spearman of predicted against true IoU.
    Regression {
        /// JSON file {"pred": [...], "truth": [...]}.
        #[arg(long)]
        input: PathBuf,
        /// Multiplier applied before computing (100 turns ratios into points).
        #[arg(long, default_value_t = 100.0)]
        scale: f64,
    },
    /// Keep masks whose PRM score reaches a threshold.
    Filter {
        #[arg(long)]
        tasks: PathBuf,
        /// Directory of {task_id}.pgm masks.
        #[arg(long, conflicts_with = "fixture")]
        masks: Option<PathBuf>,
        /// Instead of --masks, sample this many random-click masks per task.
        #[arg(long)]
        fixture: Option<usize>,
        #[arg(long, default_value_t = 3)]
        max_pos: usize,
        #[arg(long, default_value_t = 2)]
        max_neg: usize,
        #[arg(long)]
        threshold: f64,
        #[command(flatten)]
        agents: Agents,
    },
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
