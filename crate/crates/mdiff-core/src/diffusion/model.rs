//! The dense noise-prediction network and its input packing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{forward, Activation, ParamStore};
use crate::scalar::Scalar;

/// Width of the sinusoidal timestep embedding.
pub const T_EMBED_DIM: usize = 16;

/// Shape bookkeeping for packing plans into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLayout {
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub d_z: usize,
}

impl PlanLayout {
    pub fn row_width(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn plan_len(&self) -> usize {
        self.horizon * self.row_width()
    }

    /// Flattened plan ⊕ timestep embedding ⊕ context ⊕ context-drop flag.
    pub fn input_len(&self) -> usize {
        self.plan_len() + T_EMBED_DIM + self.d_z + 1
    }
}

/// Sinusoidal embedding of an integer denoise index:
/// `emb[2i] = sin(k / 10000^(i/8))`, `emb[2i+1] = cos(k / 10000^(i/8))`.
pub fn timestep_embedding<S: Scalar>(k: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(T_EMBED_DIM);
    for i in 0..T_EMBED_DIM / 2 {
        let freq = 10000f64.powf(i as f64 / (T_EMBED_DIM / 2) as f64);
        let arg = k as f64 / freq;
        out.push(S::from_f64(arg.sin()));
        out.push(S::from_f64(arg.cos()));
    }
    out
}

/// Noise predictor: a plain MLP mapping the packed input to one noise value
/// per plan entry. Context dropout is represented explicitly — a dropped
/// context is zeroed AND flagged through the trailing input bit, so the
/// network can distinguish "no context" from a context near zero.
#[derive(Debug, Clone)]
pub struct NoiseModel<S> {
    pub net: ParamStore<S>,
    pub layout: PlanLayout,
}

impl<S: Scalar> NoiseModel<S> {
    /// Seeded construction with the given hidden widths.
    pub fn init(layout: PlanLayout, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![layout.input_len()];
        dims.extend_from_slice(hidden);
        dims.push(layout.plan_len());
        let mut acts = vec![Activation::Mish; hidden.len()];
        acts.push(Activation::Identity);
        let net = ParamStore::init(&dims, &acts, seed)?;
        Ok(NoiseModel { net, layout })
    }

    pub fn cast<T: Scalar>(&self) -> NoiseModel<T> {
        NoiseModel {
            net: self.net.cast(),
            layout: self.layout,
        }
    }

    /// Packs one network input. `z = None` means "context dropped".
    pub fn pack_input(&self, plan: &[S], z: Option<&[S]>, k: usize) -> Result<Vec<S>> {
        if plan.len() != self.layout.plan_len() {
            return Err(Error::Shape(format!(
                "plan has {} entries, layout expects {}",
                plan.len(),
                self.layout.plan_len()
            )));
        }
        let mut input = Vec::with_capacity(self.layout.input_len());
        input.extend_from_slice(plan);
        input.extend(timestep_embedding::<S>(k));
        match z {
            Some(z) => {
                if z.len() != self.layout.d_z {
                    return Err(Error::Shape(format!(
                        "context has {} entries, layout expects {}",
                        z.len(),
                        self.layout.d_z
                    )));
                }
                input.extend_from_slice(z);
                input.push(S::zero());
            }
            None => {
                input.extend(std::iter::repeat(S::zero()).take(self.layout.d_z));
                input.push(S::one());
            }
        }
        Ok(input)
    }

    /// Predicted noise for a plan at schedule index `k`.
    pub fn predict(&self, plan: &[S], z: Option<&[S]>, k: usize) -> Result<Vec<S>> {
        let input = self.pack_input(plan, z, k)?;
        forward(&self.net, &input)
    }
}

// ─── Tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout() -> PlanLayout {
        PlanLayout {
            horizon: 3,
            state_dim: 2,
            action_dim: 2,
            d_z: 4,
        }
    }

    #[test]
    fn embedding_has_unit_components_at_zero() {
        let emb = timestep_embedding::<f64>(0);
        assert_eq!(emb.len(), T_EMBED_DIM);
        for i in 0..T_EMBED_DIM / 2 {
            assert_eq!(emb[2 * i], 0.0);
            assert_eq!(emb[2 * i + 1], 1.0);
        }
    }

    #[test]
    fn embedding_distinguishes_nearby_steps() {
        let a = timestep_embedding::<f64>(3);
        let b = timestep_embedding::<f64>(4);
        let dist: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 0.1, "steps 3 and 4 embed too close: {dist}");
    }

    #[test]
    fn packed_input_marks_dropped_context() {
        let m = NoiseModel::<f64>::init(small_layout(), &[8], 7).unwrap();
        let plan = vec![0.1; m.layout.plan_len()];
        let z = vec![0.5; 4];
        let with = m.pack_input(&plan, Some(&z), 2).unwrap();
        let without = m.pack_input(&plan, None, 2).unwrap();
        assert_eq!(with.len(), m.layout.input_len());
        assert_eq!(*with.last().unwrap(), 0.0);
        assert_eq!(*without.last().unwrap(), 1.0);
        // Dropped context zeroes the z slot.
        let z_start = m.layout.plan_len() + T_EMBED_DIM;
        assert!(without[z_start..z_start + 4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_output_matches_plan_len() {
        let m = NoiseModel::<f32>::init(small_layout(), &[16, 16], 3).unwrap();
        let plan = vec![0.2f32; m.layout.plan_len()];
        let out = m.predict(&plan, None, 5).unwrap();
        assert_eq!(out.len(), m.layout.plan_len());
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_rejects_wrong_context_width() {
        let m = NoiseModel::<f64>::init(small_layout(), &[8], 7).unwrap();
        let plan = vec![0.0; m.layout.plan_len()];
        assert!(m.predict(&plan, Some(&[0.0; 3]), 0).is_err());
    }
}
