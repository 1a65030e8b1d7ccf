//! Dynamics-change family: all tasks share the goal, physics differ.

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

use super::TaskFamily;

/// Point mass with per-task friction `c` and control gain `g`:
///
/// ```text
/// velocity ← (1 − c)·velocity + g·0.05·action
/// position ← position + velocity
/// reward   = −‖position − (1, 1)‖
/// ```
///
/// Every task drives toward the fixed target (1, 1), so the reward model
/// carries no task information — task identity is only observable through
/// the transitions. Episodes last 64 steps from rest at the origin.
pub struct PointMassDyn;

const ACTION_BOUND: f32 = 1.0;
const MAX_STEPS: usize = 64;
const TARGET: [f32; 2] = [1.0, 1.0];
const KP: f32 = 2.0;
const KD: f32 = 4.0;

impl TaskFamily for PointMassDyn {
    fn name(&self) -> &'static str {
        "point_mass_dyn"
    }

    fn state_dim(&self) -> usize {
        4 // (px, py, vx, vy)
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f32 {
        ACTION_BOUND
    }

    fn max_steps(&self) -> usize {
        MAX_STEPS
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn sample_params(&self, rng: &mut Stream) -> Vec<f32> {
        vec![rng::uniform(rng, 0.1, 1.0), rng::uniform(rng, 0.5, 1.5)]
    }

    fn validate_params(&self, params: &[f32]) -> Result<()> {
        if params.len() != 2 {
            return Err(Error::Config(format!(
                "point_mass_dyn expects (friction, gain), got {} values",
                params.len()
            )));
        }
        if !(0.1..=1.0).contains(&params[0]) {
            return Err(Error::Config(format!("friction {} outside [0.1, 1.0]", params[0])));
        }
        if !(0.5..=1.5).contains(&params[1]) {
            return Err(Error::Config(format!("gain {} outside [0.5, 1.5]", params[1])));
        }
        Ok(())
    }

    fn initial_state(&self) -> Vec<f32> {
        vec![0.0; 4]
    }

    fn transition(&self, params: &[f32], state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        let (c, g) = (params[0], params[1]);
        let vx = (1.0 - c) * state[2] + g * 0.05 * action[0];
        let vy = (1.0 - c) * state[3] + g * 0.05 * action[1];
        let px = state[0] + vx;
        let py = state[1] + vy;
        let dx = px - TARGET[0];
        let dy = py - TARGET[1];
        let reward = -(dx * dx + dy * dy).sqrt();
        (vec![px, py, vx, vy], reward)
    }

    fn expert_action(&self, _params: &[f32], state: &[f32]) -> Vec<f32> {
        // proportional-derivative rule on true position/velocity
        vec![
            ((TARGET[0] - state[0]) * KP - state[2] * KD).clamp(-ACTION_BOUND, ACTION_BOUND),
            ((TARGET[1] - state[1]) * KP - state[3] * KD).clamp(-ACTION_BOUND, ACTION_BOUND),
        ]
    }

    fn default_segment_len(&self) -> usize {
        16
    }

    fn default_plan_horizon(&self) -> usize {
        8
    }

    fn default_denoise_steps(&self) -> usize {
        32
    }
}
