//! Forward-process noise schedules and the closed-form noising step.

use serde::{Deserialize, Serialize};

use super::PlanArray;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which per-step variance profile to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Squared-cosine cumulative signal: `alpha_bar[k] = cos²(((k/K + 0.008)/1.008) · π/2)`.
    Cosine,
    /// Per-step betas linearly spaced from `1e-4` to `2e-2`, rescaled by `100/K`.
    Linear,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cosine" => Ok(ScheduleKind::Cosine),
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(Error::Config(format!(
                "unknown schedule '{other}' (known: cosine, linear)"
            ))),
        }
    }
}

/// Precomputed schedule arrays, all 0-indexed with `k_steps` entries.
///
/// `posterior_var[k]` is the reverse-process variance
/// `(1 − alpha_bar[k−1]) / (1 − alpha_bar[k]) · (1 − alpha[k])` with
/// `alpha_bar[−1]` taken as 1, so `posterior_var[0] == 0`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule<S> {
    pub kind: ScheduleKind,
    pub k_steps: usize,
    pub alpha: Vec<S>,
    pub alpha_bar: Vec<S>,
    pub posterior_var: Vec<S>,
}

/// Builds the schedule in f64 and narrows once at the end, so the f32 and
/// f64 variants describe the same process.
pub fn make_schedule<S: Scalar>(k_steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule<S>> {
    if k_steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    let k_f = k_steps as f64;
    let mut alpha = Vec::with_capacity(k_steps);
    let mut alpha_bar = Vec::with_capacity(k_steps);
    match kind {
        ScheduleKind::Cosine => {
            let f = |x: f64| {
                let arg = (x / k_f + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2;
                arg.cos().powi(2)
            };
            let mut prev = 1.0f64;
            for k in 0..k_steps {
                let ab = f(k as f64);
                alpha.push(ab / prev);
                alpha_bar.push(ab);
                prev = ab;
            }
        }
        ScheduleKind::Linear => {
            let scale = 100.0 / k_f;
            let (lo, hi) = (1e-4, 2e-2);
            let mut cum = 1.0f64;
            for k in 0..k_steps {
                let frac = if k_steps == 1 {
                    0.0
                } else {
                    k as f64 / (k_f - 1.0)
                };
                let beta = (lo + (hi - lo) * frac) * scale;
                let a = 1.0 - beta;
                cum *= a;
                alpha.push(a);
                alpha_bar.push(cum);
            }
        }
    }
    let mut posterior_var = Vec::with_capacity(k_steps);
    for k in 0..k_steps {
        let prev_bar = if k == 0 { 1.0 } else { alpha_bar[k - 1] };
        posterior_var.push((1.0 - prev_bar) / (1.0 - alpha_bar[k]) * (1.0 - alpha[k]));
    }
    for k in 0..k_steps {
        if !(alpha[k] > 0.0 && alpha[k] < 1.0) || !(alpha_bar[k] > 0.0 && alpha_bar[k] < 1.0) {
            return Err(Error::Numeric(format!(
                "degenerate schedule entry at index {k}: alpha={} alpha_bar={}",
                alpha[k], alpha_bar[k]
            )));
        }
    }
    Ok(NoiseSchedule {
        kind,
        k_steps,
        alpha: alpha.into_iter().map(S::from_f64).collect(),
        alpha_bar: alpha_bar.into_iter().map(S::from_f64).collect(),
        posterior_var: posterior_var.into_iter().map(S::from_f64).collect(),
    })
}

/// Closed-form forward noising: `√alpha_bar[k] · x0 + √(1 − alpha_bar[k]) · eps`.
///
/// `k` indexes the schedule arrays directly; the returned plan carries
/// denoise level `k + 1` (one noising application per schedule entry).
pub fn q_sample<S: Scalar>(
    x0: &PlanArray<S>,
    k: usize,
    eps: &[S],
    sched: &NoiseSchedule<S>,
) -> Result<PlanArray<S>> {
    if k >= sched.k_steps {
        return Err(Error::Argument(format!(
            "q_sample index {k} out of range for {}-step schedule",
            sched.k_steps
        )));
    }
    if eps.len() != x0.data.len() {
        return Err(Error::Shape(format!(
            "noise has {} entries, plan has {}",
            eps.len(),
            x0.data.len()
        )));
    }
    let signal = sched.alpha_bar[k].sqrt();
    let noise = (S::one() - sched.alpha_bar[k]).sqrt();
    let data = x0
        .data
        .iter()
        .zip(eps)
        .map(|(&x, &e)| signal * x + noise * e)
        .collect();
    Ok(PlanArray {
        data,
        rows: x0.rows,
        width: x0.width,
        k: k + 1,
    })
}

// ─── Tests ──────────────────────────────────────────────────────────────────
