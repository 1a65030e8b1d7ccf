//! Parametric multi-task environments with analytic scripted experts.
//!
//! Each environment family lives behind the [`TaskFamily`] trait and is
//! registered by name in [`FAMILIES`]; configs and CLI flags select one at
//! runtime via [`family`]. Two families exist:
//!
//! * `point_robot` — reward change: navigate a 2D point to a per-task goal
//!   drawn from the unit square; reward is negative distance to the goal.
//! * `point_mass_dyn` — dynamics change: all tasks share the target (1, 1)
//!   but differ in friction and control gain, so task identity is only
//!   visible through the transition dynamics.
//!
//! Episodes have a fixed length (no early termination) and deterministic
//! starts, so rollouts are reproducible from the policy's seed alone.

mod point_mass_dyn;
mod point_robot;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub use point_mass_dyn::PointMassDyn;
pub use point_robot::PointRobot;

/// A single task: which family it belongs to plus that family's parameter
/// vector (goal position, or physics coefficients).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: String,
    pub task_id: u32,
    pub params: Vec<f32>,
}

impl TaskSpec {
    /// Resolve the family implementation for this spec.
    pub fn family_impl(&self) -> Result<&'static dyn TaskFamily> {
        family(&self.family)
    }
}

/// One transition record `(s, a, r, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
}

/// An environment family: dimensions, task distribution, dynamics, reward,
/// scripted expert, and the desk-scale planning defaults that depend on
/// episode length.
pub trait TaskFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Half-width of the symmetric per-component action box.
    fn action_bound(&self) -> f32;
    fn max_steps(&self) -> usize;
    fn param_dim(&self) -> usize;
    /// Draw task parameters from the family's task distribution.
    fn sample_params(&self, rng: &mut Stream) -> Vec<f32>;
    fn validate_params(&self, params: &[f32]) -> Result<()>;
    fn initial_state(&self) -> Vec<f32>;
    /// Apply one step of dynamics to a (already clipped) action; returns
    /// the next state and the reward.
    fn transition(&self, params: &[f32], state: &[f32], action: &[f32]) -> (Vec<f32>, f32);
    /// Scripted expert; may read the true task parameters.
    fn expert_action(&self, params: &[f32], state: &[f32]) -> Vec<f32>;

    // Desk-scale defaults used by the harness when the config leaves the
    // corresponding field unset.
    fn default_segment_len(&self) -> usize;
    fn default_plan_horizon(&self) -> usize;
    fn default_denoise_steps(&self) -> usize;
}

/// Every registered family. Add a new environment by implementing
/// [`TaskFamily`] and listing it here.
pub static FAMILIES: &[&'static dyn TaskFamily] = &[&PointRobot, &PointMassDyn];

/// Look a family up by name (config/CLI entry point).
pub fn family(name: &str) -> Result<&'static dyn TaskFamily> {
    FAMILIES
        .iter()
        .find(|f| f.name() == name)
        .copied()
        .ok_or_else(|| {
            let known: Vec<&str> = FAMILIES.iter().map(|f| f.name()).collect();
            Error::Config(format!("unknown task family '{name}' (known: {})", known.join(", ")))
        })
}

/// Draw `n` tasks i.i.d. from the family's parameter distribution.
/// Train/test splitting is the caller's job (by index partition).
pub fn sample_tasks(family_name: &str, n: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    if n < 1 {
        return Err(Error::Argument("sample_tasks needs n >= 1".into()));
    }
    let fam = family(family_name)?;
    let mut stream = rng::stream(seed);
    Ok((0..n)
        .map(|i| TaskSpec {
            family: fam.name().to_string(),
            task_id: i as u32,
            params: fam.sample_params(&mut stream),
        })
        .collect())
}

/// A live episode. Plain value: cheap to clone, safe to move across
/// threads, no global state.
#[derive(Clone)]
pub struct EnvInstance {
    pub spec: TaskSpec,
    pub state: Vec<f32>,
    pub step_count: usize,
    pub max_steps: usize,
    fam: &'static dyn TaskFamily,
}

/// Start an episode. Both families have deterministic starts; `_seed` is
/// part of the interface for families with stochastic resets.
pub fn reset(spec: &TaskSpec, _seed: u64) -> Result<EnvInstance> {
    let fam = spec.family_impl()?;
    fam.validate_params(&spec.params)?;
    Ok(EnvInstance {
        spec: spec.clone(),
        state: fam.initial_state(),
        step_count: 0,
        max_steps: fam.max_steps(),
        fam,
    })
}

impl EnvInstance {
    pub fn done(&self) -> bool {
        self.step_count >= self.max_steps
    }

    /// Clip the action to the family's box, advance the dynamics, return
    /// `(reward, done)`.
    pub fn step(&mut self, action: &[f32]) -> Result<(f32, bool)> {
        if self.done() {
            return Err(Error::State(format!(
                "episode finished after {} steps; reset before stepping again",
                self.max_steps
            )));
        }
        if action.len() != self.fam.action_dim() {
            return Err(Error::Shape(format!(
                "action has {} components, family '{}' expects {}",
                action.len(),
                self.fam.name(),
                self.fam.action_dim()
            )));
        }
        let bound = self.fam.action_bound();
        let clipped: Vec<f32> = action.iter().map(|a| a.clamp(-bound, bound)).collect();
        let (next, reward) = self.fam.transition(&self.spec.params, &self.state, &clipped);
        self.state = next;
        self.step_count += 1;
        Ok((reward, self.done()))
    }
}

/// Scripted expert action for a task at a state.
pub fn expert_action(spec: &TaskSpec, state: &[f32]) -> Result<Vec<f32>> {
    Ok(spec.family_impl()?.expert_action(&spec.params, state))
}

// ─── Task-set serialization ──────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct TaskSetFile {
    family: String,
    seed: u64,
    tasks: Vec<TaskSetEntry>,
}

#[derive(Serialize, Deserialize)]
struct TaskSetEntry {
    task_id: u32,
    params: Vec<f32>,
}

/// Write a task set as JSON: `{family, seed, tasks: [{task_id, params}]}`.
pub fn save_task_set(specs: &[TaskSpec], seed: u64, path: &Path) -> Result<()> {
    let family_name = match specs.first() {
        Some(s) => s.family.clone(),
        None => return Err(Error::Argument("cannot save an empty task set".into())),
    };
    if specs.iter().any(|s| s.family != family_name) {
        return Err(Error::Argument("task set mixes families".into()));
    }
    let file = TaskSetFile {
        family: family_name,
        seed,
        tasks: specs
            .iter()
            .map(|s| TaskSetEntry {
                task_id: s.task_id,
                params: s.params.clone(),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Read a task set written by [`save_task_set`]; validates every entry.
pub fn load_task_set(path: &Path) -> Result<(Vec<TaskSpec>, u64)> {
    let text = std::fs::read_to_string(path)?;
    let file: TaskSetFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let fam = family(&file.family)?;
    let specs = file
        .tasks
        .into_iter()
        .map(|t| {
            fam.validate_params(&t.params)?;
            Ok(TaskSpec {
                family: file.family.clone(),
                task_id: t.task_id,
                params: t.params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((specs, file.seed))
}
