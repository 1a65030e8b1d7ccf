//! Two-phase training: context encoder + heads first, then the
//! context-conditioned denoiser. Both phases checkpoint params and optimizer
//! moments, so `--resume` continues an interrupted run bit-exactly — every
//! training step derives its randomness from the seed and the absolute step
//! index, never from wall-clock progress.

use std::fs;
use std::path::{Path, PathBuf};

use mdiff_core::datastore::{self, OfflineDataset};
use mdiff_core::diffusion::{
    make_schedule, resolve_noise_dims, train_noise_until, NoiseModel, NoiseSchedule,
    NoiseTrainState, PlanLayout,
};
use mdiff_core::numcore::{load_checkpoint, save_checkpoint, OptState, ParamStore};
use mdiff_core::taskcontext::{
    context_total_steps, label_trajectories, train_context_until, ContextModels,
    ContextTrainState,
};
use mdiff_core::{Error, Result};

use crate::artifacts::{read_json, write_json, CsvLog};
use crate::config::ExperimentConfig;

/// Extra switches for `train` beyond the shared config.
#[derive(Debug, Clone, Default)]
pub struct TrainOpts {
    /// Continue from the saved state instead of starting fresh.
    pub resume: bool,
    /// Halt the denoiser phase once its absolute step count reaches this
    /// value (state is saved; rerun with `--resume` to finish).
    pub stop_after: Option<usize>,
}

// ─── Checkpoint layout ───────────────────────────────────────────────────────

const MODEL_NAMES: [&str; 4] = [
    "context_encoder",
    "context_reward",
    "context_dynamics",
    "noise_model",
];

fn params_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.ckpt"))
}

fn moment_path(dir: &Path, name: &str, which: &str) -> PathBuf {
    dir.join("opt").join(format!("{name}_{which}.ckpt"))
}

fn save_opt(dir: &Path, name: &str, opt: &OptState<f32>) -> Result<()> {
    save_checkpoint(&opt.m, &moment_path(dir, name, "m"))?;
    save_checkpoint(&opt.v, &moment_path(dir, name, "v"))
}

fn load_opt(dir: &Path, name: &str, params: &ParamStore<f32>, lr: f64, step: u64) -> Result<OptState<f32>> {
    let mut opt = OptState::new(params, lr);
    opt.m = load_checkpoint(&moment_path(dir, name, "m"))?;
    opt.v = load_checkpoint(&moment_path(dir, name, "v"))?;
    opt.step = step;
    Ok(opt)
}

/// The slice of the config that must match for a resume to be bit-exact.
fn fingerprint(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "family": cfg.family,
        "seed": cfg.seed,
        "data": cfg.data,
        "context": cfg.context,
        "diffusion": cfg.diffusion,
    })
}

// ─── The command ─────────────────────────────────────────────────────────────

pub fn run(cfg: &ExperimentConfig, opts: &TrainOpts) -> Result<()> {
    run_at(cfg, &cfg.out_root(), opts)
}

/// Same as [`run`] but with an explicit output root (used by `ablate`).
pub fn run_at(cfg: &ExperimentConfig, root: &Path, opts: &TrainOpts) -> Result<()> {
    cfg.validate()?;
    let dir = root.join("train");
    let ds = datastore::load_dataset(&root.join("dataset"))?;
    if ds.family != cfg.family {
        return Err(Error::Config(format!(
            "dataset family {} does not match configured family {}",
            ds.family, cfg.family
        )));
    }
    fs::create_dir_all(dir.join("opt"))?;
    let state_path = dir.join("state.json");
    let prov = cfg.provenance();

    // ── Restore or initialize ──
    let mut ctx_state;
    let mut noise_state: Option<NoiseTrainState> = None;
    if opts.resume && state_path.exists() {
        let state = read_json(&state_path)?;
        if state["fingerprint"] != fingerprint(cfg) {
            return Err(Error::Config(
                "saved training state was produced by a different config; \
                 resume with the original settings or start fresh without --resume"
                    .into(),
            ));
        }
        ctx_state = restore_context(&dir, cfg, &state, &ds)?;
        if state["noise"].is_object() {
            noise_state = Some(restore_noise(&dir, cfg, &state, &ds)?);
        }
        println!(
            "resumed: context step {}, denoiser step {}",
            ctx_state.step,
            noise_state.as_ref().map_or(0, |s| s.step)
        );
    } else {
        ctx_state = ContextTrainState::fresh(&ds, &cfg.context, cfg.seed)?;
    }

    // ── Phase 1: task-context encoder and heads ──
    let ctx_target = context_total_steps(&ds, &cfg.context);
    if ctx_state.step < ctx_target {
        let t0 = std::time::Instant::now();
        let first = ctx_state.step;
        let losses = train_context_until(&ds, &cfg.context, &mut ctx_state, ctx_target, cfg.seed)?;
        let mut log = CsvLog::open(&dir.join("context_loss.csv"), "step,loss", &prov)?;
        for (i, loss) in losses.iter().enumerate() {
            log.row(format_args!("{},{}", first + i + 1, loss))?;
        }
        save_context(&dir, &ctx_state)?;
        write_state(&state_path, cfg, &ctx_state, noise_state.as_ref(), &ds)?;
        println!(
            "context phase: {} steps in {:.1?} (loss {:.4} -> {:.4})",
            losses.len(),
            t0.elapsed(),
            losses.first().copied().unwrap_or(0.0),
            losses.last().copied().unwrap_or(0.0),
        );
    } else {
        println!("context phase: already complete at step {}", ctx_state.step);
    }

    // ── Phase 2: context-conditioned denoiser ──
    let labels = label_trajectories(&ctx_state.models, &ds, cfg.diffusion.label_segments, cfg.seed)?;
    let (k_steps, _) = resolve_noise_dims(&ds, &cfg.diffusion)?;
    let sched: NoiseSchedule<f32> = make_schedule(k_steps, cfg.diffusion.schedule)?;
    let mut noise_state = match noise_state {
        Some(s) => s,
        None => NoiseTrainState::fresh(&ds, cfg.context.d_z, &cfg.diffusion, cfg.seed)?,
    };
    let target = cfg.diffusion.steps.min(opts.stop_after.unwrap_or(usize::MAX));
    if noise_state.step < target {
        let t0 = std::time::Instant::now();
        let first = noise_state.step;
        let losses =
            train_noise_until(&ds, &labels, &sched, &cfg.diffusion, &mut noise_state, target, cfg.seed)?;
        let mut log = CsvLog::open(&dir.join("noise_loss.csv"), "step,loss", &prov)?;
        for (i, loss) in losses.iter().enumerate() {
            log.row(format_args!("{},{}", first + i + 1, loss))?;
        }
        println!(
            "denoiser phase: {} steps in {:.1?} (loss {:.4} -> {:.4})",
            losses.len(),
            t0.elapsed(),
            losses.first().copied().unwrap_or(0.0),
            losses.last().copied().unwrap_or(0.0),
        );
    }
    save_checkpoint(&noise_state.model.net, &params_path(&dir, "noise_model"))?;
    save_opt(&dir, "noise_model", &noise_state.opt)?;
    write_state(&state_path, cfg, &ctx_state, Some(&noise_state), &ds)?;

    let complete = noise_state.step >= cfg.diffusion.steps;
    write_manifest(&dir, cfg, &ctx_state, &noise_state, &ds, complete)?;
    if complete {
        println!("training complete: artifacts in {}", dir.display());
    } else {
        println!(
            "training stopped at denoiser step {} of {}; rerun with --resume to finish",
            noise_state.step, cfg.diffusion.steps
        );
    }
    Ok(())
}

fn save_context(dir: &Path, state: &ContextTrainState) -> Result<()> {
    save_checkpoint(&state.models.encoder, &params_path(dir, "context_encoder"))?;
    save_checkpoint(&state.models.reward, &params_path(dir, "context_reward"))?;
    save_checkpoint(&state.models.dynamics, &params_path(dir, "context_dynamics"))?;
    save_opt(dir, "context_encoder", &state.opt_encoder)?;
    save_opt(dir, "context_reward", &state.opt_reward)?;
    save_opt(dir, "context_dynamics", &state.opt_dynamics)
}

fn write_state(
    path: &Path,
    cfg: &ExperimentConfig,
    ctx: &ContextTrainState,
    noise: Option<&NoiseTrainState>,
    ds: &OfflineDataset,
) -> Result<()> {
    let (k_steps, horizon) = resolve_noise_dims(ds, &cfg.diffusion)?;
    write_json(
        path,
        &serde_json::json!({
            "fingerprint": fingerprint(cfg),
            "dims": {
                "state_dim": ds.state_dim,
                "action_dim": ds.action_dim,
                "h": ctx.models.h,
                "d_z": ctx.models.d_z,
                "horizon": horizon,
                "k_steps": k_steps,
            },
            "context": {
                "step": ctx.step,
                "opt_steps": {
                    "encoder": ctx.opt_encoder.step,
                    "reward": ctx.opt_reward.step,
                    "dynamics": ctx.opt_dynamics.step,
                },
            },
            "noise": noise.map(|n| serde_json::json!({
                "step": n.step,
                "opt_step": n.opt.step,
            })),
        }),
    )
}

fn restore_context(
    dir: &Path,
    cfg: &ExperimentConfig,
    state: &serde_json::Value,
    ds: &OfflineDataset,
) -> Result<ContextTrainState> {
    let dims = &state["dims"];
    let h = dims["h"].as_u64().unwrap_or(0) as usize;
    let d_z = dims["d_z"].as_u64().unwrap_or(0) as usize;
    if h == 0 || d_z == 0 {
        return Err(Error::Config("saved state is missing model dimensions".into()));
    }
    let models = ContextModels {
        encoder: load_checkpoint(&params_path(dir, "context_encoder"))?,
        reward: load_checkpoint(&params_path(dir, "context_reward"))?,
        dynamics: load_checkpoint(&params_path(dir, "context_dynamics"))?,
        h,
        d_z,
        state_dim: ds.state_dim,
        action_dim: ds.action_dim,
    };
    let steps = &state["context"]["opt_steps"];
    Ok(ContextTrainState {
        opt_encoder: load_opt(dir, "context_encoder", &models.encoder, cfg.context.lr, steps["encoder"].as_u64().unwrap_or(0))?,
        opt_reward: load_opt(dir, "context_reward", &models.reward, cfg.context.lr, steps["reward"].as_u64().unwrap_or(0))?,
        opt_dynamics: load_opt(dir, "context_dynamics", &models.dynamics, cfg.context.lr, steps["dynamics"].as_u64().unwrap_or(0))?,
        models,
        step: state["context"]["step"].as_u64().unwrap_or(0) as usize,
    })
}

fn restore_noise(
    dir: &Path,
    cfg: &ExperimentConfig,
    state: &serde_json::Value,
    ds: &OfflineDataset,
) -> Result<NoiseTrainState> {
    let dims = &state["dims"];
    let layout = PlanLayout {
        horizon: dims["horizon"].as_u64().unwrap_or(0) as usize,
        state_dim: ds.state_dim,
        action_dim: ds.action_dim,
        d_z: dims["d_z"].as_u64().unwrap_or(0) as usize,
    };
    let model = NoiseModel {
        net: load_checkpoint(&params_path(dir, "noise_model"))?,
        layout,
    };
    Ok(NoiseTrainState {
        opt: load_opt(dir, "noise_model", &model.net, cfg.diffusion.lr, state["noise"]["opt_step"].as_u64().unwrap_or(0))?,
        model,
        step: state["noise"]["step"].as_u64().unwrap_or(0) as usize,
    })
}

fn write_manifest(
    dir: &Path,
    cfg: &ExperimentConfig,
    ctx: &ContextTrainState,
    noise: &NoiseTrainState,
    ds: &OfflineDataset,
    complete: bool,
) -> Result<()> {
    let (k_steps, horizon) = resolve_noise_dims(ds, &cfg.diffusion)?;
    let files: Vec<String> = MODEL_NAMES.iter().map(|n| format!("{n}.ckpt")).collect();
    write_json(
        dir.join("manifest.json").as_path(),
        &serde_json::json!({
            "run": cfg.provenance(),
            "dims": {
                "state_dim": ds.state_dim,
                "action_dim": ds.action_dim,
                "h": ctx.models.h,
                "d_z": ctx.models.d_z,
                "horizon": horizon,
                "k_steps": k_steps,
            },
            "context_steps": ctx.step,
            "noise_steps": noise.step,
            "noise_steps_target": cfg.diffusion.steps,
            "complete": complete,
            "files": files,
        }),
    )
}

// ─── Loading a trained bundle for downstream commands ───────────────────────

/// Everything `eval` and `ablate` need from a finished training run.
pub struct TrainedBundle {
    pub ctx: ContextModels<f32>,
    pub model: NoiseModel<f32>,
    pub sched: NoiseSchedule<f32>,
    pub manifest: serde_json::Value,
}

/// Reconstructs the trained models from `<root>/train`. The denoise
/// schedule is rebuilt from the manifest's embedded config, so sampling
/// uses exactly the schedule the model was trained against.
pub fn load_bundle(root: &Path) -> Result<TrainedBundle> {
    let dir = root.join("train");
    let manifest = read_json(&dir.join("manifest.json"))?;
    let dims = &manifest["dims"];
    let need = |key: &str| -> Result<usize> {
        dims[key]
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Config(format!("manifest is missing dims.{key}")))
    };
    let trained: ExperimentConfig = serde_json::from_value(manifest["run"]["config"].clone())
        .map_err(|e| Error::Config(format!("manifest has an unreadable config: {e}")))?;
    if manifest["complete"] != serde_json::Value::Bool(true) {
        eprintln!("warning: training run in {} is incomplete", dir.display());
    }
    let ctx = ContextModels {
        encoder: load_checkpoint(&params_path(&dir, "context_encoder"))?,
        reward: load_checkpoint(&params_path(&dir, "context_reward"))?,
        dynamics: load_checkpoint(&params_path(&dir, "context_dynamics"))?,
        h: need("h")?,
        d_z: need("d_z")?,
        state_dim: need("state_dim")?,
        action_dim: need("action_dim")?,
    };
    let model = NoiseModel {
        net: load_checkpoint(&params_path(&dir, "noise_model"))?,
        layout: PlanLayout {
            horizon: need("horizon")?,
            state_dim: ctx.state_dim,
            action_dim: ctx.action_dim,
            d_z: ctx.d_z,
        },
    };
    let sched = make_schedule(need("k_steps")?, trained.diffusion.schedule)?;
    Ok(TrainedBundle { ctx, model, sched, manifest })
}
