//! Adaptive-moment optimizer (Adam) with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::net::ParamStore;
use crate::scalar::Scalar;

/// Optimizer state; moment accumulators mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct OptState<S> {
    pub m: ParamStore<S>,
    pub v: ParamStore<S>,
    pub step: u64,
    pub hp: OptHyper,
}

/// Scalar hyperparameters, kept in f64 so they serialize exactly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptHyper {
    fn default() -> Self {
        OptHyper {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<S: Scalar> OptState<S> {
    pub fn new(params: &ParamStore<S>, lr: f64) -> Self {
        OptState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            hp: OptHyper {
                lr,
                ..OptHyper::default()
            },
        }
    }
}

/// One Adam update in place. Rejects non-finite gradients, naming the
/// offending tensor.
pub fn opt_step<S: Scalar>(
    opt: &mut OptState<S>,
    params: &mut ParamStore<S>,
    grads: &ParamStore<S>,
) -> Result<()> {
    if params.layers.len() != grads.layers.len() {
        return Err(Error::Shape("gradient layer count differs from parameters".into()));
    }
    for (i, (gl, pl)) in grads.layers.iter().zip(&params.layers).enumerate() {
        if gl.w.len() != pl.w.len() || gl.b.len() != pl.b.len() {
            return Err(Error::Shape(format!("layer {i}: gradient shape differs")));
        }
        if gl.w.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i} weights")));
        }
        if gl.b.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i} bias")));
        }
    }

    opt.step += 1;
    let b1 = S::from_f64(opt.hp.beta1);
    let b2 = S::from_f64(opt.hp.beta2);
    let one = S::one();
    let corr1 = S::from_f64(1.0 - opt.hp.beta1.powi(opt.step as i32));
    let corr2 = S::from_f64(1.0 - opt.hp.beta2.powi(opt.step as i32));
    let lr = S::from_f64(opt.hp.lr);
    let eps = S::from_f64(opt.hp.eps);

    for ((pl, gl), (ml, vl)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(opt.m.layers.iter_mut().zip(opt.v.layers.iter_mut()))
    {
        let update = |p: &mut S, g: S, m: &mut S, v: &mut S| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / corr1;
            let vhat = *v / corr2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        };
        for ((p, &g), (m, v)) in pl.w.iter_mut().zip(&gl.w).zip(ml.w.iter_mut().zip(vl.w.iter_mut())) {
            update(p, g, m, v);
        }
        for ((p, &g), (m, v)) in pl.b.iter_mut().zip(&gl.b).zip(ml.b.iter_mut().zip(vl.b.iter_mut())) {
            update(p, g, m, v);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::net::Activation;

    fn scalar_net(p0: f64) -> ParamStore<f64> {
        let mut net = ParamStore::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        net.layers[0].w[0] = p0;
        net
    }

    #[test]
    fn zero_gradients_with_zero_moments_leave_params_fixed() {
        let mut net = scalar_net(0.7);
        let mut opt = OptState::new(&net, 0.1);
        let grads = net.zeros_like();
        opt_step(&mut opt, &mut net, &grads).unwrap();
        assert_eq!(net.layers[0].w[0], 0.7);
        assert_eq!(opt.step, 1);
    }

    // With preloaded moments, a zero gradient still moves the parameter
    // (momentum), but both moments must decay by their betas.
    #[test]
    fn zero_gradients_decay_preloaded_moments() {
        let mut net = scalar_net(0.7);
        let mut opt = OptState::new(&net, 0.1);
        opt.m.layers[0].w[0] = 1.0;
        opt.v.layers[0].w[0] = 1.0;
        let grads = net.zeros_like();
        opt_step(&mut opt, &mut net, &grads).unwrap();
        assert!((opt.m.layers[0].w[0] - 0.9).abs() < 1e-15);
        assert!((opt.v.layers[0].w[0] - 0.999).abs() < 1e-15);
        assert_ne!(net.layers[0].w[0], 0.7, "momentum should still move the parameter");
    }

    // Hand-evaluated first step: m̂ = g, v̂ = g², Δ = lr·g/(|g| + ε) ≈ lr.
    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut opt = OptState::new(&net, 0.1);
        let mut grads = net.zeros_like();
        grads.layers[0].w[0] = 1.0;
        opt_step(&mut opt, &mut net, &grads).unwrap();
        let p = net.layers[0].w[0];
        assert!((p + 0.1).abs() < 1e-8, "p = {p}");
    }

    #[test]
    fn lr_zero_never_moves_params() {
        let mut net: ParamStore<f64> =
            ParamStore::init(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], 9).unwrap();
        let before = net.clone();
        let mut opt = OptState::new(&net, 0.0);
        let mut grads = net.zeros_like();
        grads.for_each_mut(|g| *g = 0.37);
        for _ in 0..5 {
            opt_step(&mut opt, &mut net, &grads).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let run = || {
            let mut net: ParamStore<f32> =
                ParamStore::init(&[2, 8, 1], &[Activation::Mish, Activation::Identity], 21).unwrap();
            let mut opt = OptState::new(&net, 1e-3);
            let mut stream = crate::rng::stream(5);
            for _ in 0..50 {
                // arbitrary synthetic gradient built from the stream
                let mut grads = net.zeros_like();
                grads.for_each_mut(|g| *g = crate::rng::normal(&mut stream));
                opt_step(&mut opt, &mut net, &grads).unwrap();
            }
            net.flatten()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut net = scalar_net(0.0);
        let mut opt = OptState::new(&net, 0.1);
        let mut grads = net.zeros_like();
        grads.layers[0].w[0] = f64::NAN;
        let err = opt_step(&mut opt, &mut net, &grads).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("layer 0 weights"));
    }
}
