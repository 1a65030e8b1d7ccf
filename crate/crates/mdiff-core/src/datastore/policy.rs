//! Behavior policies used to generate offline data.
//!
//! Policies are registered by name so data quality is a runtime choice
//! (config or CLI flag) rather than a compile-time one.

use crate::envsuite::{TaskFamily, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// A data-collection behavior. Implementations must be deterministic given
/// the RNG stream and must emit actions within the family's bound.
pub trait BehaviorPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn action(
        &self,
        fam: &dyn TaskFamily,
        spec: &TaskSpec,
        state: &[f32],
        rng: &mut Stream,
    ) -> Vec<f32>;

    /// Called once at the start of each episode; lets a policy commit to a
    /// per-episode behavior (a mode, a noise level). Stateless policies
    /// return a copy of themselves without touching the stream.
    fn episode_policy(&self, rng: &mut Stream) -> Box<dyn BehaviorPolicy>;
}

/// The family's scripted controller.
pub struct ExpertPolicy;

impl BehaviorPolicy for ExpertPolicy {
    fn name(&self) -> &'static str {
        "expert"
    }

    fn action(
        &self,
        fam: &dyn TaskFamily,
        spec: &TaskSpec,
        state: &[f32],
        _rng: &mut Stream,
    ) -> Vec<f32> {
        fam.expert_action(&spec.params, state)
    }

    fn episode_policy(&self, _rng: &mut Stream) -> Box<dyn BehaviorPolicy> {
        Box::new(ExpertPolicy)
    }
}

/// Uniform actions over the admissible box.
pub struct RandomPolicy;

impl BehaviorPolicy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn action(
        &self,
        fam: &dyn TaskFamily,
        _spec: &TaskSpec,
        _state: &[f32],
        rng: &mut Stream,
    ) -> Vec<f32> {
        let b = fam.action_bound();
        (0..fam.action_dim())
            .map(|_| rng::uniform(rng, -b as f64, b as f64))
            .collect()
    }

    fn episode_policy(&self, _rng: &mut Stream) -> Box<dyn BehaviorPolicy> {
        Box::new(RandomPolicy)
    }
}

/// Flips a fair coin every step between the expert and a uniform action —
/// trajectories that make progress but wander.
pub struct MediumPolicy;

impl BehaviorPolicy for MediumPolicy {
    fn name(&self) -> &'static str {
        "medium"
    }

    fn action(
        &self,
        fam: &dyn TaskFamily,
        spec: &TaskSpec,
        state: &[f32],
        rng: &mut Stream,
    ) -> Vec<f32> {
        let coin: f64 = rng::uniform(rng, 0.0, 1.0);
        if coin < 0.5 {
            fam.expert_action(&spec.params, state)
        } else {
            RandomPolicy.action(fam, spec, state, rng)
        }
    }

    fn episode_policy(&self, _rng: &mut Stream) -> Box<dyn BehaviorPolicy> {
        Box::new(MediumPolicy)
    }
}

/// The scripted controller with zero-mean exploration noise added to every
/// action. The noise scale is fixed for the episode, mimicking one snapshot
/// of a decaying exploration schedule.
pub struct NoisyExpertPolicy {
    /// Per-axis uniform noise half-width, as a fraction of the action bound.
    pub sigma: f64,
}

impl BehaviorPolicy for NoisyExpertPolicy {
    fn name(&self) -> &'static str {
        "noisy-expert"
    }

    fn action(
        &self,
        fam: &dyn TaskFamily,
        spec: &TaskSpec,
        state: &[f32],
        rng: &mut Stream,
    ) -> Vec<f32> {
        let b = fam.action_bound();
        let width = self.sigma * b as f64;
        fam.expert_action(&spec.params, state)
            .into_iter()
            .map(|a| {
                let noise: f64 = rng::uniform(rng, -width, width);
                (a as f64 + noise) as f32
            })
            .map(|a| a.clamp(-b, b))
            .collect()
    }

    fn episode_policy(&self, _rng: &mut Stream) -> Box<dyn BehaviorPolicy> {
        Box::new(NoisyExpertPolicy { sigma: self.sigma })
    }
}

/// Imitates the replay buffer of a converged single-task trainer: most
/// episodes come from the final policy perturbed by leftover exploration
/// noise (a fresh noise scale per episode), plus a minority of mid-training
/// and untrained episodes for state coverage.
pub struct ReplayPolicy;

impl BehaviorPolicy for ReplayPolicy {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn action(
        &self,
        fam: &dyn TaskFamily,
        spec: &TaskSpec,
        state: &[f32],
        rng: &mut Stream,
    ) -> Vec<f32> {
        MediumPolicy.action(fam, spec, state, rng)
    }

    fn episode_policy(&self, rng: &mut Stream) -> Box<dyn BehaviorPolicy> {
        let u: f64 = rng::uniform(rng, 0.0, 1.0);
        if u < 0.6 {
            let sigma: f64 = rng::uniform(rng, 0.0, 1.0);
            Box::new(NoisyExpertPolicy { sigma })
        } else if u < 0.8 {
            Box::new(MediumPolicy)
        } else {
            Box::new(RandomPolicy)
        }
    }
}

/// All registered policies.
pub static POLICIES: &[&'static dyn BehaviorPolicy] =
    &[&ExpertPolicy, &MediumPolicy, &RandomPolicy, &ReplayPolicy];

/// Looks a policy up by name.
pub fn policy(name: &str) -> Result<&'static dyn BehaviorPolicy> {
    POLICIES
        .iter()
        .copied()
        .find(|p| p.name() == name)
        .ok_or_else(|| {
            let known: Vec<_> = POLICIES.iter().map(|p| p.name()).collect();
            Error::Config(format!(
                "unknown behavior policy '{name}' (known: {})",
                known.join(", ")
            ))
        })
}
