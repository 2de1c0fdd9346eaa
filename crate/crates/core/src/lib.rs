//! Few-shot skill learning by composing trajectory diffusion policies.
//!
//! The crate is organised bottom-up:
//!
//! * [`kinematics`]: DH serial chains, forward kinematics, Jacobians, damped
//!   least-squares differential IK and the parametric skill generators that
//!   produce every training and demonstration set.
//! * [`diffusion`]: DDPM noise schedule, a small conditional MLP denoiser
//!   with hand-written backpropagation, training and ancestral sampling.
//! * [`composition`]: sampling from `prod_i q_i(a)^{w_i}` by blending the
//!   per-model noise predictions with simplex weights.
//! * [`mmdfk`]: the rational-quadratic / forward-kinematics kernel and the
//!   unbiased squared-MMD estimator over trajectory sets.
//! * [`dse`]: composition-weight estimation by minimising MMD-FK against a
//!   handful of demonstrations.
//! * [`io`], [`experiment`] and [`cli`]: file formats, canned experiment
//!   pipelines and the `dse` command-line tool.

pub mod cli;
pub mod composition;
pub mod diffusion;
pub mod dse;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kinematics;
pub mod mmdfk;
pub mod rng;
pub(crate) mod sum;

pub use error::{Error, Result};
