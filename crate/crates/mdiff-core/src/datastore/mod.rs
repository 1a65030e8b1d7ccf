//! Offline dataset collection, normalization, and minibatch sampling.
//!
//! A dataset is a set of tasks, each labeled train or test, with a fixed
//! number of behavior-policy trajectories per task. Normalization bounds
//! are computed from the training split only and map each state/action
//! dimension into `[-1, 1]`; rewards are never normalized.

mod io;
mod policy;

pub use io::{load_dataset, save_dataset};
pub use policy::{policy, BehaviorPolicy, ExpertPolicy, MediumPolicy, RandomPolicy, POLICIES};

use serde::{Deserialize, Serialize};

use crate::diffusion::PlanArray;
use crate::envsuite::{self, TaskSpec, Transition};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Which side of the task partition an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One rollout: `states` has one more row than `actions`/`rewards`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: u32,
    pub states: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub ret: f32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// A short ordered window of transitions from one trajectory.
#[derive(Debug, Clone)]
pub struct Segment {
    pub task_id: u32,
    pub transitions: Vec<Transition>,
}

/// Per-dimension min/max bounds from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub state_min: Vec<f32>,
    pub state_max: Vec<f32>,
    pub action_min: Vec<f32>,
    pub action_max: Vec<f32>,
}

fn norm_one(x: f32, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        2.0 * (x - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

fn denorm_one(u: f32, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        lo + (u + 1.0) * (hi - lo) / 2.0
    } else {
        lo
    }
}

impl NormStats {
    /// All-zero bounds; every dimension is treated as constant.
    pub fn degenerate(state_dim: usize, action_dim: usize) -> Self {
        NormStats {
            state_min: vec![0.0; state_dim],
            state_max: vec![0.0; state_dim],
            action_min: vec![0.0; action_dim],
            action_max: vec![0.0; action_dim],
        }
    }

    /// Scans every state (including terminal ones) and action of the given
    /// trajectories.
    pub fn from_trajectories<'a>(
        trajs: impl Iterator<Item = &'a Trajectory> + Clone,
        state_dim: usize,
        action_dim: usize,
    ) -> Self {
        let mut stats = NormStats {
            state_min: vec![f32::INFINITY; state_dim],
            state_max: vec![f32::NEG_INFINITY; state_dim],
            action_min: vec![f32::INFINITY; action_dim],
            action_max: vec![f32::NEG_INFINITY; action_dim],
        };
        let mut seen = false;
        for traj in trajs {
            seen = true;
            for s in &traj.states {
                for d in 0..state_dim {
                    stats.state_min[d] = stats.state_min[d].min(s[d]);
                    stats.state_max[d] = stats.state_max[d].max(s[d]);
                }
            }
            for a in &traj.actions {
                for d in 0..action_dim {
                    stats.action_min[d] = stats.action_min[d].min(a[d]);
                    stats.action_max[d] = stats.action_max[d].max(a[d]);
                }
            }
        }
        if !seen {
            return NormStats::degenerate(state_dim, action_dim);
        }
        stats
    }

    pub fn normalize_state(&self, s: &[f32]) -> Vec<f32> {
        s.iter()
            .zip(self.state_min.iter().zip(&self.state_max))
            .map(|(&x, (&lo, &hi))| norm_one(x, lo, hi))
            .collect()
    }

    pub fn denormalize_state(&self, u: &[f32]) -> Vec<f32> {
        u.iter()
            .zip(self.state_min.iter().zip(&self.state_max))
            .map(|(&x, (&lo, &hi))| denorm_one(x, lo, hi))
            .collect()
    }

    pub fn normalize_action(&self, a: &[f32]) -> Vec<f32> {
        a.iter()
            .zip(self.action_min.iter().zip(&self.action_max))
            .map(|(&x, (&lo, &hi))| norm_one(x, lo, hi))
            .collect()
    }

    pub fn denormalize_action(&self, u: &[f32]) -> Vec<f32> {
        u.iter()
            .zip(self.action_min.iter().zip(&self.action_max))
            .map(|(&x, (&lo, &hi))| denorm_one(x, lo, hi))
            .collect()
    }
}

/// One task with its split label and rollouts.
#[derive(Debug, Clone)]
pub struct TaskEntry {
    pub spec: TaskSpec,
    pub split: Split,
    pub trajs: Vec<Trajectory>,
}

/// The full offline corpus for one environment family.
#[derive(Debug, Clone)]
pub struct OfflineDataset {
    pub family: String,
    pub seed: u64,
    pub policy: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub tasks: Vec<TaskEntry>,
    pub norm: NormStats,
}

impl OfflineDataset {
    /// A dataset with no tasks at all (still saveable/loadable).
    pub fn empty(family: &str) -> Result<Self> {
        let fam = envsuite::family(family)?;
        Ok(OfflineDataset {
            family: family.to_string(),
            seed: 0,
            policy: "expert".to_string(),
            state_dim: fam.state_dim(),
            action_dim: fam.action_dim(),
            tasks: Vec::new(),
            norm: NormStats::degenerate(fam.state_dim(), fam.action_dim()),
        })
    }

    /// Indices of training tasks, in task order.
    pub fn train_task_indices(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.split == Split::Train)
            .map(|(i, _)| i)
            .collect()
    }

    /// Training trajectories flattened in (task, trajectory) order.
    pub fn train_trajs(&self) -> Vec<&Trajectory> {
        self.tasks
            .iter()
            .filter(|t| t.split == Split::Train)
            .flat_map(|t| t.trajs.iter())
            .collect()
    }

    pub fn test_specs(&self) -> Vec<TaskSpec> {
        self.tasks
            .iter()
            .filter(|t| t.split == Split::Test)
            .map(|t| t.spec.clone())
            .collect()
    }

    pub fn total_train_transitions(&self) -> usize {
        self.tasks
            .iter()
            .filter(|t| t.split == Split::Train)
            .flat_map(|t| t.trajs.iter())
            .map(|tr| tr.len())
            .sum()
    }
}

/// Rolls out one episode of `policy_name` on `spec`, seeded by `seed`.
pub fn rollout(spec: &TaskSpec, policy_name: &str, seed: u64) -> Result<Trajectory> {
    let fam = spec.family_impl()?;
    let mut env = envsuite::reset(spec, seed)?;
    let mut r = rng::stream(seed);
    let pol = policy(policy_name)?.episode_policy(&mut r);
    let bound = fam.action_bound();
    let mut states = vec![env.state.clone()];
    let mut actions = Vec::with_capacity(fam.max_steps());
    let mut rewards = Vec::with_capacity(fam.max_steps());
    while !env.done() {
        let mut a = pol.action(fam, spec, &env.state, &mut r);
        for v in &mut a {
            *v = v.clamp(-bound, bound);
        }
        let (rew, _) = env.step(&a)?;
        states.push(env.state.clone());
        actions.push(a);
        rewards.push(rew);
    }
    let ret = rewards.iter().sum();
    Ok(Trajectory {
        task_id: spec.task_id,
        states,
        actions,
        rewards,
        ret,
    })
}

/// Rolls out `n` episodes with per-episode derived seeds.
pub fn rollout_many(spec: &TaskSpec, policy_name: &str, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    (0..n)
        .map(|i| rollout(spec, policy_name, rng::derive2(seed, spec.task_id as u64, i as u64)))
        .collect()
}

/// Collects a dataset: `n_traj_per_task` rollouts of the named policy on
/// every task. Normalization bounds come from the training split only.
/// Fully determined by its arguments.
pub fn collect(
    specs: &[TaskSpec],
    splits: &[Split],
    policy_name: &str,
    n_traj_per_task: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if specs.is_empty() {
        return Err(Error::Argument("collect needs at least one task".into()));
    }
    if specs.len() != splits.len() {
        return Err(Error::Shape(format!(
            "{} tasks but {} split labels",
            specs.len(),
            splits.len()
        )));
    }
    if n_traj_per_task == 0 {
        return Err(Error::Argument("need at least one trajectory per task".into()));
    }
    let family = specs[0].family.clone();
    if specs.iter().any(|s| s.family != family) {
        return Err(Error::Argument("all tasks must share one family".into()));
    }
    policy(policy_name)?;
    let fam = envsuite::family(&family)?;
    let mut tasks = Vec::with_capacity(specs.len());
    for (spec, &split) in specs.iter().zip(splits) {
        fam.validate_params(&spec.params)?;
        let trajs = rollout_many(spec, policy_name, n_traj_per_task, seed)?;
        tasks.push(TaskEntry {
            spec: spec.clone(),
            split,
            trajs,
        });
    }
    let norm = NormStats::from_trajectories(
        tasks
            .iter()
            .filter(|t| t.split == Split::Train)
            .flat_map(|t| t.trajs.iter()),
        fam.state_dim(),
        fam.action_dim(),
    );
    Ok(OfflineDataset {
        family,
        seed,
        policy: policy_name.to_string(),
        state_dim: fam.state_dim(),
        action_dim: fam.action_dim(),
        tasks,
        norm,
    })
}

/// A minibatch of normalized plan windows with their source indices
/// (`task_idx` into `dataset.tasks`, `traj_idx` within that task).
#[derive(Debug, Clone)]
pub struct PlanBatch {
    pub plans: Vec<PlanArray<f32>>,
    pub task_idx: Vec<usize>,
    pub traj_idx: Vec<usize>,
}

/// Draws `batch` H-row windows uniformly over training trajectories and
/// admissible offsets. Rows are normalized state ⊕ normalized action.
pub fn sample_plan_batch(
    ds: &OfflineDataset,
    horizon: usize,
    batch: usize,
    rng: &mut Stream,
) -> Result<PlanBatch> {
    if horizon == 0 {
        return Err(Error::Argument("plan horizon must be at least 1".into()));
    }
    let pairs: Vec<(usize, usize)> = ds
        .tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.split == Split::Train)
        .flat_map(|(ti, t)| (0..t.trajs.len()).map(move |tj| (ti, tj)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::State("dataset has no training trajectories".into()));
    }
    let width = ds.state_dim + ds.action_dim;
    let mut plans = Vec::with_capacity(batch);
    let mut task_idx = Vec::with_capacity(batch);
    let mut traj_idx = Vec::with_capacity(batch);
    for _ in 0..batch {
        let (ti, tj) = pairs[rng::index(rng, pairs.len())];
        let traj = &ds.tasks[ti].trajs[tj];
        if traj.len() < horizon {
            return Err(Error::Argument(format!(
                "horizon {horizon} exceeds trajectory length {}",
                traj.len()
            )));
        }
        let offset = rng::index(rng, traj.len() - horizon + 1);
        let mut data = Vec::with_capacity(horizon * width);
        for t in offset..offset + horizon {
            data.extend(ds.norm.normalize_state(&traj.states[t]));
            data.extend(ds.norm.normalize_action(&traj.actions[t]));
        }
        plans.push(PlanArray {
            data,
            rows: horizon,
            width,
            k: 0,
        });
        task_idx.push(ti);
        traj_idx.push(tj);
    }
    Ok(PlanBatch {
        plans,
        task_idx,
        traj_idx,
    })
}

/// Draws `m` length-`h` windows uniformly over the given trajectories.
pub fn sample_segments(
    trajs: &[&Trajectory],
    h: usize,
    m: usize,
    rng: &mut Stream,
) -> Result<Vec<Segment>> {
    if h == 0 {
        return Err(Error::Argument("segment length must be at least 1".into()));
    }
    if trajs.is_empty() {
        return Err(Error::State("no trajectories to sample segments from".into()));
    }
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let traj = trajs[rng::index(rng, trajs.len())];
        if traj.len() < h {
            return Err(Error::Argument(format!(
                "segment length {h} exceeds trajectory length {}",
                traj.len()
            )));
        }
        let offset = rng::index(rng, traj.len() - h + 1);
        let transitions = (offset..offset + h)
            .map(|t| Transition {
                s: traj.states[t].clone(),
                a: traj.actions[t].clone(),
                r: traj.rewards[t],
                s_next: traj.states[t + 1].clone(),
            })
            .collect();
        out.push(Segment {
            task_id: traj.task_id,
            transitions,
        });
    }
    Ok(out)
}

// ─── Tests ──────────────────────────────────────────────────────────────────
