//! Noise-prediction training: the surrogate loss and the training loop.

use serde::{Deserialize, Serialize};

use super::model::NoiseModel;
use super::schedule::{make_schedule, q_sample, NoiseSchedule, ScheduleKind};
use super::PlanArray;
use crate::datastore::{sample_plan_batch, OfflineDataset};
use crate::envsuite;
use crate::error::{Error, Result};
use crate::numcore::{backward_from_trace, forward_trace, opt_step, OptState, ParamStore};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

/// A fully pinned loss example: clean plan, optional context (`None` means
/// the context was dropped), schedule index, and the injected noise.
#[derive(Debug, Clone)]
pub struct FixedLossItem<'a, S> {
    pub x0: &'a PlanArray<S>,
    pub z: Option<&'a [S]>,
    pub k: usize,
    pub eps: &'a [S],
}

/// Deterministic loss core: mean over items of `‖eps − ε̂(x_k, k, z)‖²`
/// with parameter gradients. All randomness (k, eps, dropout) is already
/// baked into the items, which is what makes this checkable by finite
/// differences.
pub fn diffusion_loss_fixed<S: Scalar>(
    model: &NoiseModel<S>,
    sched: &NoiseSchedule<S>,
    items: &[FixedLossItem<'_, S>],
) -> Result<(S, ParamStore<S>)> {
    if items.is_empty() {
        return Err(Error::Argument("diffusion loss over an empty batch".into()));
    }
    let mut grads = model.net.zeros_like();
    let mut loss = S::zero();
    let inv = S::from_f64(1.0 / items.len() as f64);
    let two = S::from_f64(2.0);
    for item in items {
        let x_k = q_sample(item.x0, item.k, item.eps, sched)?;
        let input = model.pack_input(&x_k.data, item.z, item.k)?;
        let trace = forward_trace(&model.net, &input)?;
        let pred = trace.output();
        let mut og = Vec::with_capacity(pred.len());
        for (p, e) in pred.iter().zip(item.eps) {
            let diff = *p - *e;
            loss += diff * diff;
            og.push(two * diff * inv);
        }
        let (g, _) = backward_from_trace(&model.net, &trace, &og)?;
        grads.add_assign(&g);
    }
    Ok((loss * inv, grads))
}

/// Stochastic training loss: draws a schedule index, Gaussian noise, and a
/// Bernoulli(`beta`) context-drop decision per item, then evaluates the
/// fixed core. `contexts[i]` conditions `plans[i]` when not dropped.
pub fn diffusion_loss<S: Scalar>(
    model: &NoiseModel<S>,
    sched: &NoiseSchedule<S>,
    plans: &[PlanArray<S>],
    contexts: &[Vec<S>],
    beta: f64,
    rng: &mut Stream,
) -> Result<(S, ParamStore<S>)> {
    if plans.len() != contexts.len() {
        return Err(Error::Shape(format!(
            "{} plans but {} contexts",
            plans.len(),
            contexts.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("context dropout beta {beta} outside [0, 1]")));
    }
    let mut ks = Vec::with_capacity(plans.len());
    let mut epss = Vec::with_capacity(plans.len());
    let mut drops = Vec::with_capacity(plans.len());
    for plan in plans {
        ks.push(rng::index(rng, sched.k_steps));
        epss.push((0..plan.data.len()).map(|_| rng::normal::<S>(rng)).collect::<Vec<S>>());
        let coin: f64 = rng::uniform(rng, 0.0, 1.0);
        drops.push(coin < beta);
    }
    let items: Vec<FixedLossItem<'_, S>> = plans
        .iter()
        .zip(contexts)
        .zip(ks.iter().zip(epss.iter().zip(&drops)))
        .map(|((x0, z), (&k, (eps, &dropped)))| FixedLossItem {
            x0,
            z: if dropped { None } else { Some(z.as_slice()) },
            k,
            eps,
        })
        .collect();
    diffusion_loss_fixed(model, sched, &items)
}

/// Training knobs for the denoiser phase. Zero-valued `k_steps` / `horizon`
/// fall back to the environment family's defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Context dropout probability; 1 trains a fully unconditional model.
    pub beta: f64,
    pub k_steps: usize,
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub schedule: ScheduleKind,
    /// Segments pooled per trajectory when labeling training data.
    pub label_segments: usize,
    /// Cosine-decay the learning rate to `lr_floor × lr` over `steps`.
    pub lr_floor: f64,
}

impl Default for NoiseTrainConfig {
    fn default() -> Self {
        NoiseTrainConfig {
            steps: 6000,
            batch: 64,
            lr: 1e-3,
            beta: 0.2,
            k_steps: 0,
            horizon: 0,
            hidden: vec![128, 128],
            schedule: ScheduleKind::Cosine,
            label_segments: 16,
            lr_floor: 0.05,
        }
    }
}

/// Learning rate at `step` of a run configured for `cfg.steps` total steps:
/// cosine decay from `lr` to `lr_floor × lr`. Anchoring on the configured
/// total (not the resume target) keeps interrupted runs bit-exact.
fn lr_at(cfg: &NoiseTrainConfig, step: usize) -> f64 {
    if cfg.steps <= 1 {
        return cfg.lr;
    }
    let frac = (step.min(cfg.steps - 1)) as f64 / (cfg.steps - 1) as f64;
    let floor = cfg.lr * cfg.lr_floor;
    floor + (cfg.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Resolved `(k_steps, horizon)` for a dataset's family.
pub fn resolve_noise_dims(ds: &OfflineDataset, cfg: &NoiseTrainConfig) -> Result<(usize, usize)> {
    let fam = envsuite::family(&ds.family)?;
    let k = if cfg.k_steps > 0 { cfg.k_steps } else { fam.default_denoise_steps() };
    let h = if cfg.horizon > 0 { cfg.horizon } else { fam.default_plan_horizon() };
    Ok((k, h))
}

/// Resumable denoiser training state.
#[derive(Debug, Clone)]
pub struct NoiseTrainState {
    pub model: NoiseModel<f32>,
    pub opt: OptState<f32>,
    pub step: usize,
}

impl NoiseTrainState {
    pub fn fresh(ds: &OfflineDataset, d_z: usize, cfg: &NoiseTrainConfig, seed: u64) -> Result<Self> {
        let (_, horizon) = resolve_noise_dims(ds, cfg)?;
        let layout = super::model::PlanLayout {
            horizon,
            state_dim: ds.state_dim,
            action_dim: ds.action_dim,
            d_z,
        };
        let model = NoiseModel::init(layout, &cfg.hidden, rng::derive_labeled(seed, "noise-init"))?;
        Ok(NoiseTrainState {
            opt: OptState::new(&model.net, cfg.lr),
            model,
            step: 0,
        })
    }
}

/// Trained model, per-step losses, and the schedule it was trained against.
#[derive(Debug, Clone)]
pub struct NoiseTrainOutcome {
    pub model: NoiseModel<f32>,
    pub losses: Vec<f32>,
    pub schedule: NoiseSchedule<f32>,
}

/// Runs denoiser training from `state.step` up to `total_steps`. Labels are
/// per-trajectory pooled contexts indexed `[task][trajectory]`; each step's
/// randomness is derived from the seed and step index alone, so resumed
/// runs continue bit-exactly.
pub fn train_noise_until(
    ds: &OfflineDataset,
    labels: &[Vec<Vec<f32>>],
    sched: &NoiseSchedule<f32>,
    cfg: &NoiseTrainConfig,
    state: &mut NoiseTrainState,
    total_steps: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    if labels.len() != ds.tasks.len() {
        return Err(Error::Shape(format!(
            "{} label groups for {} tasks",
            labels.len(),
            ds.tasks.len()
        )));
    }
    let horizon = state.model.layout.horizon;
    let base = rng::derive_labeled(seed, "noise-step");
    let mut losses = Vec::new();
    while state.step < total_steps {
        let mut r = rng::stream(rng::derive(base, state.step as u64));
        let batch = sample_plan_batch(ds, horizon, cfg.batch, &mut r)?;
        let contexts: Vec<Vec<f32>> = batch
            .task_idx
            .iter()
            .zip(&batch.traj_idx)
            .map(|(&ti, &tj)| labels[ti][tj].clone())
            .collect();
        let (loss, grads) = diffusion_loss(&state.model, sched, &batch.plans, &contexts, cfg.beta, &mut r)?;
        state.opt.hp.lr = lr_at(cfg, state.step);
        opt_step(&mut state.opt, &mut state.model.net, &grads)?;
        losses.push(loss);
        state.step += 1;
    }
    Ok(losses)
}

/// Convenience wrapper: build the schedule, start fresh, run all steps.
pub fn train_noise_model(
    ds: &OfflineDataset,
    labels: &[Vec<Vec<f32>>],
    cfg: &NoiseTrainConfig,
    seed: u64,
) -> Result<NoiseTrainOutcome> {
    let (k_steps, _) = resolve_noise_dims(ds, cfg)?;
    let sched = make_schedule::<f32>(k_steps, cfg.schedule)?;
    let d_z = labels
        .iter()
        .flat_map(|t| t.iter())
        .next()
        .map(|z| z.len())
        .ok_or_else(|| Error::Argument("no context labels provided".into()))?;
    let mut state = NoiseTrainState::fresh(ds, d_z, cfg, seed)?;
    let losses = train_noise_until(ds, labels, &sched, cfg, &mut state, cfg.steps, seed)?;
    Ok(NoiseTrainOutcome {
        model: state.model,
        losses,
        schedule: sched,
    })
}

// ─── Tests ──────────────────────────────────────────────────────────────────
