//! Co-design toolkit for wireless networked control over multi-receiver
//! over-the-air computation (OAC).
//!
//! The pipeline has three stages:
//!
//! 1. [`synthesis`] finds a static output-feedback gain `G` that respects the
//!    sensor/actuator topology and minimizes the closed loop's worst-case
//!    energy-to-energy gain, by iterating convex LMI subproblems solved by
//!    the small interior-point layer in [`sdp`].
//! 2. [`factorization`] turns `G` and a channel realization into precoder and
//!    decoder codebooks `(P, D)` with `Pᵀ D = (G ⊙ H⁻¹)ᵀ` under per-sensor power
//!    budgets, using a proximal ADMM with an increasing penalty.
//! 3. [`simulate`] and [`experiments`] run the resulting closed loop under
//!    decoder-shaped receiver noise and reproduce the stability and
//!    MSE-versus-SNR studies.
//!
//! Data-parallel loops (Monte Carlo runs, experiment trials) go through
//! [`exec`], which uses rayon when the `parallel` feature is enabled and a
//! plain sequential loop otherwise.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod experiments;
pub mod factorization;
pub mod io;
pub mod linalg;
pub mod model;
pub mod sdp;
pub mod simulate;
pub mod synthesis;

pub use error::{Error, Result};
pub use model::{ChannelRealization, GainConstraintSet, NetworkTopology, PlantModel, PowerBudget};
