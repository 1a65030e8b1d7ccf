//! Receding-horizon planning and meta-test evaluation.
//!
//! At every environment step the planner samples a fresh guided plan
//! conditioned on the warm-start context and the current observation,
//! executes the plan's first action, and discards the rest. The per-step
//! dynamics gap — distance between the plan's predicted next state and the
//! state the environment actually produced — is recorded as the
//! model-quality diagnostic surfaced in evaluation reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{self, NormStats};
use crate::diffusion::{sample_plan, DualGuide, GuideConfig, NoiseModel, NoiseSchedule};
use crate::envsuite::{self, TaskSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::taskcontext::{infer_context, ContextModels};

/// Everything one episode produced.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub states: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub ret: f32,
    /// Per step: ‖actual next state − plan's predicted next state‖, or 0
    /// when the horizon is too short to predict one.
    pub dyn_gap: Vec<f32>,
}

/// How test-time context is gathered before planning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStartConfig {
    /// Behavior policy used for the warm-start rollouts.
    pub quality: String,
    pub n_traj: usize,
    /// Segments pooled into the task context.
    pub segments: usize,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        WarmStartConfig {
            quality: "expert".to_string(),
            n_traj: 5,
            segments: 16,
        }
    }
}

/// Runs one full episode of receding-horizon control on `spec`.
pub fn plan_episode(
    spec: &TaskSpec,
    model: &NoiseModel<f32>,
    sched: &NoiseSchedule<f32>,
    ctx: &ContextModels<f32>,
    norm: &NormStats,
    z: &[f32],
    cfg: &GuideConfig,
    seed: u64,
) -> Result<EpisodeTrace> {
    let fam = spec.family_impl()?;
    let state_dim = model.layout.state_dim;
    if state_dim != fam.state_dim() {
        return Err(Error::Shape(format!(
            "model state dim {} does not match family '{}'",
            state_dim,
            spec.family
        )));
    }
    let guide = DualGuide {
        reward: &ctx.reward,
        dynamics: &ctx.dynamics,
    };
    let mut env = envsuite::reset(spec, seed)?;
    let mut r = rng::stream(rng::derive_labeled(seed, "plan-episode"));
    let bound = fam.action_bound();
    let mut trace = EpisodeTrace {
        states: vec![env.state.clone()],
        actions: Vec::with_capacity(fam.max_steps()),
        rewards: Vec::with_capacity(fam.max_steps()),
        ret: 0.0,
        dyn_gap: Vec::with_capacity(fam.max_steps()),
    };
    while !env.done() {
        let obs = norm.normalize_state(&env.state);
        let plan = sample_plan(model, Some(&guide), sched, z, cfg, &obs, &mut r)?;
        let mut action = norm.denormalize_action(&plan.row(0)[state_dim..]);
        for a in &mut action {
            *a = a.clamp(-bound, bound);
        }
        let predicted_next = if plan.rows >= 2 {
            Some(norm.denormalize_state(&plan.row(1)[..state_dim]))
        } else {
            None
        };
        let (reward, _) = env.step(&action)?;
        let gap = match &predicted_next {
            Some(p) => p
                .iter()
                .zip(&env.state)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f32>()
                .sqrt(),
            None => 0.0,
        };
        trace.states.push(env.state.clone());
        trace.actions.push(action);
        trace.rewards.push(reward);
        trace.dyn_gap.push(gap);
    }
    trace.ret = trace.rewards.iter().sum();
    Ok(trace)
}

/// Per-task evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: u32,
    pub params: Vec<f32>,
    pub returns: Vec<f32>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_dyn_gap: f64,
}

/// Aggregated meta-test results. `mean_return` weights tasks equally;
/// `std_return` is the sample standard deviation over all episodes pooled.
/// An evaluation over zero tasks or zero episodes yields an empty `tasks`
/// list with zeroed aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub family: String,
    pub episodes_per_task: usize,
    pub seed: u64,
    pub warmstart: WarmStartConfig,
    pub guide: GuideConfig,
    pub tasks: Vec<TaskReport>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_dyn_gap: f64,
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Evaluates the planning stack on held-out tasks: collect warm-start
/// rollouts of the requested quality, infer a context, then run
/// `episodes_per_task` planned episodes per task. Per-task work is seeded
/// independently, so results do not depend on scheduling order.
#[allow(clippy::too_many_arguments)]
pub fn meta_test(
    specs: &[TaskSpec],
    model: &NoiseModel<f32>,
    sched: &NoiseSchedule<f32>,
    ctx: &ContextModels<f32>,
    norm: &NormStats,
    warm: &WarmStartConfig,
    cfg: &GuideConfig,
    episodes_per_task: usize,
    seed: u64,
) -> Result<EvalReport> {
    let family = specs.first().map(|s| s.family.clone()).unwrap_or_default();
    let mut report = EvalReport {
        family,
        episodes_per_task,
        seed,
        warmstart: warm.clone(),
        guide: *cfg,
        tasks: Vec::new(),
        mean_return: 0.0,
        std_return: 0.0,
        mean_dyn_gap: 0.0,
    };
    if specs.is_empty() || episodes_per_task == 0 {
        return Ok(report);
    }
    datastore::policy(&warm.quality)?;
    let warm_base = rng::derive_labeled(seed, "warmstart");
    let episode_base = rng::derive_labeled(seed, "episode");
    let rows: Vec<Result<TaskReport>> = specs
        .par_iter()
        .enumerate()
        .map(|(ti, spec)| -> Result<TaskReport> {
            let wseed = rng::derive(warm_base, ti as u64);
            let trajs: Vec<datastore::Trajectory> = (0..warm.n_traj)
                .map(|j| datastore::rollout(spec, &warm.quality, rng::derive(wseed, j as u64)))
                .collect::<Result<_>>()?;
            let z = infer_context(
                ctx,
                norm,
                &trajs,
                warm.segments,
                rng::derive_labeled(wseed, "infer"),
            )?;
            let mut returns = Vec::with_capacity(episodes_per_task);
            let mut gaps = Vec::with_capacity(episodes_per_task);
            for e in 0..episodes_per_task {
                let eseed = rng::derive2(episode_base, ti as u64, e as u64);
                let trace = plan_episode(spec, model, sched, ctx, norm, &z, cfg, eseed)?;
                returns.push(trace.ret);
                let gap = if trace.dyn_gap.is_empty() {
                    0.0
                } else {
                    trace.dyn_gap.iter().map(|&g| g as f64).sum::<f64>() / trace.dyn_gap.len() as f64
                };
                gaps.push(gap);
            }
            let rets: Vec<f64> = returns.iter().map(|&r| r as f64).collect();
            let mean = rets.iter().sum::<f64>() / rets.len() as f64;
            Ok(TaskReport {
                task_id: spec.task_id,
                params: spec.params.clone(),
                returns,
                mean_return: mean,
                std_return: sample_std(&rets, mean),
                mean_dyn_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
            })
        })
        .collect();
    for row in rows {
        report.tasks.push(row?);
    }
    report.mean_return =
        report.tasks.iter().map(|t| t.mean_return).sum::<f64>() / report.tasks.len() as f64;
    report.mean_dyn_gap =
        report.tasks.iter().map(|t| t.mean_dyn_gap).sum::<f64>() / report.tasks.len() as f64;
    let all: Vec<f64> = report
        .tasks
        .iter()
        .flat_map(|t| t.returns.iter().map(|&r| r as f64))
        .collect();
    let pooled_mean = all.iter().sum::<f64>() / all.len() as f64;
    report.std_return = sample_std(&all, pooled_mean);
    Ok(report)
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{collect, Split};
    use crate::diffusion::{make_schedule, NoiseTrainConfig, NoiseTrainState, ScheduleKind};

    struct Stack {
        model: NoiseModel<f32>,
        sched: NoiseSchedule<f32>,
        ctx: ContextModels<f32>,
        norm: NormStats,
        specs: Vec<TaskSpec>,
    }

    /// Untrained-but-wired stack: initialization only, no training steps.
    /// Planning behavior is arbitrary, which is fine for the invariants
    /// these tests check (determinism, shapes, replay).
    fn stack(horizon: usize) -> Stack {
        let specs = envsuite::sample_tasks("point_robot", 3, 2).unwrap();
        let ds = collect(&specs, &[Split::Train; 3], "medium", 3, 2).unwrap();
        let ctx = ContextModels::init(2, 2, 4, 4, &[16], &[16], 3).unwrap();
        let cfg = NoiseTrainConfig {
            hidden: vec![16],
            k_steps: 6,
            horizon,
            ..NoiseTrainConfig::default()
        };
        let state = NoiseTrainState::fresh(&ds, 4, &cfg, 4).unwrap();
        Stack {
            model: state.model,
            sched: make_schedule::<f32>(6, ScheduleKind::Cosine).unwrap(),
            ctx,
            norm: ds.norm.clone(),
            specs,
        }
    }

    #[test]
    fn episode_runs_to_env_length_and_respects_bounds() {
        let s = stack(4);
        let z = vec![0.1f32; 4];
        let trace = plan_episode(
            &s.specs[0],
            &s.model,
            &s.sched,
            &s.ctx,
            &s.norm,
            &z,
            &GuideConfig::default(),
            7,
        )
        .unwrap();
        assert_eq!(trace.actions.len(), 20);
        assert_eq!(trace.states.len(), 21);
        assert_eq!(trace.dyn_gap.len(), 20);
        assert!((trace.ret - trace.rewards.iter().sum::<f32>()).abs() < 1e-5);
        for a in &trace.actions {
            assert!(a.iter().all(|v| v.abs() <= 0.1 + 1e-6));
        }
    }

    #[test]
    fn horizon_one_plans_have_no_dynamics_gap() {
        let s = stack(1);
        let z = vec![0.0f32; 4];
        let trace = plan_episode(
            &s.specs[1],
            &s.model,
            &s.sched,
            &s.ctx,
            &s.norm,
            &z,
            &GuideConfig::default(),
            11,
        )
        .unwrap();
        assert!(trace.dyn_gap.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn open_loop_replay_reproduces_rewards() {
        let s = stack(3);
        let z = vec![0.05f32; 4];
        let trace = plan_episode(
            &s.specs[2],
            &s.model,
            &s.sched,
            &s.ctx,
            &s.norm,
            &z,
            &GuideConfig::default(),
            13,
        )
        .unwrap();
        let mut env = envsuite::reset(&s.specs[2], 13).unwrap();
        for (action, &want) in trace.actions.iter().zip(&trace.rewards) {
            let (got, _) = env.step(action).unwrap();
            assert_eq!(got.to_bits(), want.to_bits());
        }
        assert!(env.done());
    }

    #[test]
    fn meta_test_is_deterministic_including_serialization() {
        let s = stack(2);
        let warm = WarmStartConfig {
            quality: "medium".into(),
            n_traj: 2,
            segments: 4,
        };
        let run = || {
            meta_test(
                &s.specs,
                &s.model,
                &s.sched,
                &s.ctx,
                &s.norm,
                &warm,
                &GuideConfig::default(),
                2,
                21,
            )
            .unwrap()
        };
        let a = serde_json::to_string(&run()).unwrap();
        let b = serde_json::to_string(&run()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_task_list_or_zero_episodes_yield_empty_reports() {
        let s = stack(2);
        let warm = WarmStartConfig::default();
        let r1 = meta_test(
            &[],
            &s.model,
            &s.sched,
            &s.ctx,
            &s.norm,
            &warm,
            &GuideConfig::default(),
            3,
            1,
        )
        .unwrap();
        assert!(r1.tasks.is_empty());
        assert_eq!(r1.mean_return, 0.0);
        let r2 = meta_test(
            &s.specs,
            &s.model,
            &s.sched,
            &s.ctx,
            &s.norm,
            &warm,
            &GuideConfig::default(),
            0,
            1,
        )
        .unwrap();
        assert!(r2.tasks.is_empty());
    }

    #[test]
    fn unknown_warmstart_quality_is_a_config_error() {
        let s = stack(2);
        let warm = WarmStartConfig {
            quality: "flawless".into(),
            ..WarmStartConfig::default()
        };
        let err = meta_test(
            &s.specs,
            &s.model,
            &s.sched,
            &s.ctx,
            &s.norm,
            &warm,
            &GuideConfig::default(),
            1,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
