//! `mdiff` — dataset generation, training, evaluation, ablation, and
//! reporting for the context-conditioned trajectory planner.
//!
//! Settings resolve in three layers: built-in defaults, then the `--config`
//! file, then individual flags. The `MDIFF_OUT` environment variable
//! overrides the output root last. Exit codes: 0 on success, 2 for usage or
//! configuration problems, 3 for numeric failures.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mdiff_cli::commands::{ablate, eval, gen_data, report, train};
use mdiff_cli::config::ExperimentConfig;
use mdiff_core::Result;

#[derive(Parser)]
#[command(name = "mdiff", version, about = "Offline meta-trained trajectory planner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Experiment config file (JSON). Omitted fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root (the MDIFF_OUT environment variable overrides this).
    #[arg(long)]
    out: Option<String>,
    /// Base seed for the whole experiment.
    #[arg(long)]
    seed: Option<u64>,
    /// Task family name.
    #[arg(long)]
    family: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a task set and record behavior-policy rollouts.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Behavior policy: expert, medium, random, or replay.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        train_tasks: Option<usize>,
        #[arg(long)]
        test_tasks: Option<usize>,
        /// Trajectories recorded per task.
        #[arg(long)]
        n_traj: Option<usize>,
    },
    /// Train the task-context encoder, then the conditioned denoiser.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the saved training state.
        #[arg(long)]
        resume: bool,
        /// Halt the denoiser phase at this absolute step (resume later).
        #[arg(long)]
        stop_after: Option<usize>,
        /// Denoiser optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Context-phase epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Context-dropout probability (1 trains an unconditional model).
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Plan on held-out tasks and compare against the scripted expert.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Conditional guidance weight.
        #[arg(long)]
        omega: Option<f64>,
        /// Dynamics-consistency weight inside the guide.
        #[arg(long)]
        lambda: Option<f64>,
        /// Guide ascent step size (0 disables guidance).
        #[arg(long)]
        guide_step: Option<f64>,
        /// Initial-noise temperature for sampling.
        #[arg(long)]
        temperature: Option<f64>,
        /// Warm-start rollout quality.
        #[arg(long)]
        quality: Option<String>,
        /// Episodes per task per seed.
        #[arg(long)]
        episodes: Option<usize>,
        /// Comma-separated evaluation seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Evaluate this task-set file instead of the held-out split.
        #[arg(long)]
        task_set: Option<PathBuf>,
    },
    /// Sweep config values over a grid, one row per cell.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Grid file: JSON object mapping dotted config paths to arrays.
        #[arg(long)]
        grid: PathBuf,
        /// Worker pool size (default: physical cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Render existing artifacts into a Markdown report.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(family) = &common.family {
        cfg.family = family.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { common, policy, train_tasks, test_tasks, n_traj } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = policy {
                cfg.data.policy = p;
            }
            if let Some(n) = train_tasks {
                cfg.data.train_tasks = n;
            }
            if let Some(n) = test_tasks {
                cfg.data.test_tasks = n;
            }
            if let Some(n) = n_traj {
                cfg.data.n_traj = n;
            }
            gen_data::run(&cfg)
        }
        Cmd::Train { common, resume, stop_after, steps, epochs, beta } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.diffusion.steps = s;
            }
            if let Some(e) = epochs {
                cfg.context.epochs = e;
            }
            if let Some(b) = beta {
                cfg.diffusion.beta = b;
            }
            train::run(&cfg, &train::TrainOpts { resume, stop_after })
        }
        Cmd::Eval { common, omega, lambda, guide_step, temperature, quality, episodes, seeds, task_set } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = omega {
                cfg.guide.omega = v;
            }
            if let Some(v) = lambda {
                cfg.guide.lambda = v;
            }
            if let Some(v) = guide_step {
                cfg.guide.guide_step = v;
            }
            if let Some(v) = temperature {
                cfg.guide.sample_temperature = v;
            }
            if let Some(q) = quality {
                cfg.eval.warmstart.quality = q;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes_per_task = e;
            }
            if let Some(s) = seeds {
                cfg.eval.seeds = s;
            }
            eval::run(&cfg, &eval::EvalOpts { task_set })
        }
        Cmd::Ablate { common, grid, jobs } => {
            let cfg = load_config(&common)?;
            ablate::run(&cfg, &ablate::AblateOpts { grid, jobs })
        }
        Cmd::Report { common } => {
            let cfg = load_config(&common)?;
            report::run(&cfg)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
