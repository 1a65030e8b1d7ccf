//! Reward-change family: 2D goal navigation in the unit square.

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

use super::TaskFamily;

/// Point robot: position integrates the (clipped) action directly, reward
/// is negative Euclidean distance to the per-task goal, episodes last 20
/// steps from a fixed start at the origin.
pub struct PointRobot;

const ACTION_BOUND: f32 = 0.1;
const MAX_STEPS: usize = 20;

impl TaskFamily for PointRobot {
    fn name(&self) -> &'static str {
        "point_robot"
    }

    fn state_dim(&self) -> usize {
        2
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
        // goals uniform over the unit square
        vec![rng::uniform(rng, 0.0, 1.0), rng::uniform(rng, 0.0, 1.0)]
    }

    fn validate_params(&self, params: &[f32]) -> Result<()> {
        if params.len() != 2 {
            return Err(Error::Config(format!(
                "point_robot expects 2 goal coordinates, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("goal {params:?} outside the unit square")));
        }
        Ok(())
    }

    fn initial_state(&self) -> Vec<f32> {
        vec![0.0, 0.0]
    }

    fn transition(&self, params: &[f32], state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        let next = vec![state[0] + action[0], state[1] + action[1]];
        let dx = next[0] - params[0];
        let dy = next[1] - params[1];
        let reward = -(dx * dx + dy * dy).sqrt();
        (next, reward)
    }

    fn expert_action(&self, params: &[f32], state: &[f32]) -> Vec<f32> {
        vec![
            (params[0] - state[0]).clamp(-ACTION_BOUND, ACTION_BOUND),
            (params[1] - state[1]).clamp(-ACTION_BOUND, ACTION_BOUND),
        ]
    }

    fn default_segment_len(&self) -> usize {
        4
    }

    fn default_plan_horizon(&self) -> usize {
        4
    }

    fn default_denoise_steps(&self) -> usize {
        100
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use crate::envsuite::{reset, TaskSpec};

    use super::*;

    fn spec(goal: [f32; 2]) -> TaskSpec {
        TaskSpec {
            family: "point_robot".into(),
            task_id: 0,
            params: goal.to_vec(),
        }
    }

    #[test]
    fn zero_action_reward_is_negative_goal_distance() {
        let mut env = reset(&spec([0.5, 0.0]), 0).unwrap();
        let (r, _) = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(env.state, vec![0.0, 0.0]);
        assert!((r + 0.5).abs() < 1e-7, "reward {r}");
    }

    #[test]
    fn reward_is_zero_only_at_goal() {
        let mut env = reset(&spec([0.3, 0.4]), 0).unwrap();
        env.state = vec![0.3, 0.4];
        let (r, _) = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(r, 0.0);
        let mut env2 = reset(&spec([0.3, 0.4]), 0).unwrap();
        let (r2, _) = env2.step(&[0.0, 0.0]).unwrap();
        assert!(r2 < 0.0);
    }

    #[test]
    fn expert_action_inside_and_outside_clip_box() {
        let pr = PointRobot;
        assert_eq!(pr.expert_action(&[0.05, 0.0], &[0.0, 0.0]), vec![0.05, 0.0]);
        assert_eq!(pr.expert_action(&[1.0, 0.0], &[0.0, 0.0]), vec![0.1, 0.0]);
    }

    // Scripted expert reaches every goal on a 10×10 grid within 0.05 in at
    // most 20 steps.
    #[test]
    fn expert_reaches_every_grid_goal() {
        for i in 0..10 {
            for j in 0..10 {
                let goal = [i as f32 / 9.0, j as f32 / 9.0];
                let s = spec(goal);
                let mut env = reset(&s, 0).unwrap();
                for _ in 0..20 {
                    let a = PointRobot.expert_action(&s.params, &env.state);
                    env.step(&a).unwrap();
                }
                let d = ((env.state[0] - goal[0]).powi(2) + (env.state[1] - goal[1]).powi(2)).sqrt();
                assert!(d <= 0.05, "goal {goal:?} missed by {d}");
            }
        }
    }

    proptest! {
        // Shifting position and goal by the same offset leaves reward and
        // the expert's response unchanged (up to f32 rounding).
        #[test]
        fn translation_equivariance(
            px in -0.5f32..0.5, py in -0.5f32..0.5,
            gx in 0.0f32..1.0, gy in 0.0f32..1.0,
            ox in -2.0f32..2.0, oy in -2.0f32..2.0,
            ax in -0.1f32..0.1, ay in -0.1f32..0.1,
        ) {
            let pr = PointRobot;
            let (_, r1) = pr.transition(&[gx, gy], &[px, py], &[ax, ay]);
            let (_, r2) = pr.transition(&[gx + ox, gy + oy], &[px + ox, py + oy], &[ax, ay]);
            prop_assert!((r1 - r2).abs() < 1e-5);
            let a1 = pr.expert_action(&[gx, gy], &[px, py]);
            let a2 = pr.expert_action(&[gx + ox, gy + oy], &[px + ox, py + oy]);
            prop_assert!((a1[0] - a2[0]).abs() < 1e-5 && (a1[1] - a2[1]).abs() < 1e-5);
        }

        #[test]
        fn rewards_never_positive(
            gx in 0.0f32..1.0, gy in 0.0f32..1.0,
            ax in -0.2f32..0.2, ay in -0.2f32..0.2,
        ) {
            let mut env = reset(&spec([gx, gy]), 0).unwrap();
            let (r, _) = env.step(&[ax, ay]).unwrap();
            prop_assert!(r <= 0.0);
        }
    }
}
