//! Offline multi-task trajectory-diffusion planning at desk scale.
//!
//! The pipeline has three learned pieces and one control loop:
//!
//! 1. [`taskcontext`] — a segment encoder that maps short windows of
//!    experience from an unknown task to a latent task embedding `z`,
//!    trained jointly with a reward model and a dynamics model that both
//!    condition on `z`.
//! 2. [`diffusion`] — a denoising diffusion model over short normalized
//!    (state, action) plan windows, conditioned on `z` with classifier-free
//!    dropout, plus gradient guidance from the reward/dynamics models.
//! 3. [`planner`] — receding-horizon control: infer `z` once from
//!    warm-start trajectories, then repeatedly sample a guided plan from
//!    the current state and execute its first action.
//!
//! Everything trains through [`numcore`], a small dense-network substrate
//! with analytic gradients and a finite-difference oracle. Environments
//! live in [`envsuite`] and offline data handling in [`datastore`].
//!
//! All randomness flows from explicit seeds; there is no wall-clock or OS
//! entropy anywhere, so identical configurations produce identical bytes.

pub mod datastore;
pub mod diffusion;
pub mod envsuite;
pub mod error;
pub mod numcore;
pub mod planner;
pub mod rng;
pub mod scalar;
pub mod taskcontext;

pub use error::{Error, Result};
pub use scalar::Scalar;
