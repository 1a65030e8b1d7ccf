//! Finite-difference gradient oracle.
//!
//! `grad_check` verifies an analytic gradient (computed at whatever
//! precision the model runs in) against central finite differences of the
//! same loss evaluated in f64. Running the FD side in f64 is what makes
//! the f32 check meaningful: it measures the f32 backward pass against a
//! trustworthy reference instead of against its own rounding noise.

use crate::error::{Error, Result};
use crate::numcore::net::ParamStore;
use crate::scalar::Scalar;

/// Worst relative error between the analytic gradient of `loss_and_grad`
/// at `params` and central finite differences of `loss_f64` (the same loss
/// on f64-cast parameters), perturbing every parameter by ±`fd_step`.
///
/// Per-entry error is `|analytic − fd| / max(|fd|, 0.1·‖fd‖∞, 1e-8)` —
/// relative to the gradient's own scale, so near-zero entries do not
/// amplify FD truncation noise — with a plain absolute difference when
/// both entries are below 1e-8.
pub fn grad_check<S: Scalar>(
    params: &ParamStore<S>,
    mut loss_and_grad: impl FnMut(&ParamStore<S>) -> Result<(S, ParamStore<S>)>,
    mut loss_f64: impl FnMut(&ParamStore<f64>) -> Result<f64>,
    fd_step: f64,
) -> Result<f64> {
    let (loss0, analytic) = loss_and_grad(params)?;
    if !loss0.is_finite() {
        return Err(Error::Numeric("loss is not finite at the given parameters".into()));
    }
    let analytic: Vec<f64> = analytic.flatten().iter().map(|&g| g.to_f64()).collect();

    let mut p64 = params.cast::<f64>();
    let n = p64.n_params();
    let mut fds = Vec::with_capacity(n);
    for i in 0..n {
        let orig = *param_at(&mut p64, i);
        *param_at(&mut p64, i) = orig + fd_step;
        let plus = loss_f64(&p64)?;
        *param_at(&mut p64, i) = orig - fd_step;
        let minus = loss_f64(&p64)?;
        *param_at(&mut p64, i) = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("loss not finite when perturbing parameter {i}")));
        }
        fds.push((plus - minus) / (2.0 * fd_step));
    }

    let gmax = fds.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut worst = 0.0f64;
    for (a, fd) in analytic.iter().zip(&fds) {
        let err = if a.abs() < 1e-8 && fd.abs() < 1e-8 {
            (a - fd).abs()
        } else {
            (a - fd).abs() / fd.abs().max(0.1 * gmax).max(1e-8)
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Address the i-th parameter in the stable flatten order (per layer:
/// weights then bias).
fn param_at<S: Scalar>(store: &mut ParamStore<S>, mut i: usize) -> &mut S {
    for layer in &mut store.layers {
        if i < layer.w.len() {
            return &mut layer.w[i];
        }
        i -= layer.w.len();
        if i < layer.b.len() {
            return &mut layer.b[i];
        }
        i -= layer.b.len();
    }
    panic!("parameter index out of range");
}
