//! Conditional denoising diffusion over plan windows.
//!
//! A "plan" is an H-row matrix of concatenated normalized (state, action)
//! pairs. The forward process noises plans according to a [`NoiseSchedule`];
//! a dense [`NoiseModel`] learns to predict the injected noise given the
//! noised plan, a sinusoidal timestep embedding, and (with classifier-free
//! dropout) the task context. Sampling runs the learned reverse process
//! with three conditioning mechanisms layered on top:
//!
//! * classifier-free mixing of conditional/unconditional predictions
//!   (weight `omega`),
//! * gradient guidance toward high predicted return and low predicted
//!   dynamics discrepancy (`lambda` balancing the two, step `guide_step`),
//! * inpainting of the observed current state into the first plan row
//!   after every denoise step.
//!
//! Denoise-index bookkeeping: schedule arrays are 0-indexed with `K`
//! entries. A plan's `k` field counts noising levels: `K` is pure noise,
//! `0` is clean; level `k` uses schedule entry `k − 1`, and the model's
//! timestep input is always that 0-based entry index.

mod loss;
mod model;
mod sample;
mod schedule;

pub use loss::{
    diffusion_loss, diffusion_loss_fixed, resolve_noise_dims, train_noise_model,
    train_noise_until, FixedLossItem, NoiseTrainConfig, NoiseTrainOutcome, NoiseTrainState,
};
pub use model::{timestep_embedding, NoiseModel, PlanLayout, T_EMBED_DIM};
pub use sample::{cf_noise, dual_guide_grad, guided_denoise_step, sample_plan, DualGuide, GuideConfig};
pub use schedule::{make_schedule, q_sample, NoiseSchedule, ScheduleKind};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The diffusion variable: `rows × width` normalized (state ⊕ action)
/// entries, row-major, at denoise level `k` (see module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct PlanArray<S> {
    pub data: Vec<S>,
    pub rows: usize,
    pub width: usize,
    pub k: usize,
}

impl<S: Scalar> PlanArray<S> {
    pub fn zeros(rows: usize, width: usize) -> Self {
        PlanArray {
            data: vec![S::zero(); rows * width],
            rows,
            width,
            k: 0,
        }
    }

    pub fn from_rows(rows_data: &[Vec<S>]) -> Result<Self> {
        let rows = rows_data.len();
        if rows == 0 {
            return Err(Error::Argument("plan needs at least one row".into()));
        }
        let width = rows_data[0].len();
        if rows_data.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("plan rows have unequal widths".into()));
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in rows_data {
            data.extend_from_slice(r);
        }
        Ok(PlanArray {
            data,
            rows,
            width,
            k: 0,
        })
    }

    pub fn row(&self, t: usize) -> &[S] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
