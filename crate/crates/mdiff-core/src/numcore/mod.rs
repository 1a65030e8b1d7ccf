//! Dense networks with analytic gradients, an Adam optimizer, a
//! finite-difference gradient oracle, and a bit-exact checkpoint format.
//!
//! This is the only place in the workspace where gradients are computed;
//! the encoder, reward model, dynamics model, and noise model are all
//! plain [`ParamStore`] stacks trained through [`backward`] / [`opt_step`]
//! and verified against [`grad_check`].
//!
//! Training code runs in `f32`; every network function is generic over
//! [`crate::Scalar`] so the gradient checks can drive the identical code
//! paths in `f64`.

mod check;
mod ckpt;
mod net;
mod opt;

pub use check::grad_check;
pub use ckpt::{load_checkpoint, save_checkpoint};
pub use net::{backward, backward_from_trace, forward, forward_trace, Activation, ForwardTrace, Layer, ParamStore};
pub use opt::{opt_step, OptState};
