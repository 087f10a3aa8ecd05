//! Safety filtering for second-order control-affine systems under a
//! position-level constraint, velocity box constraints and input bounds.
//!
//! The building blocks, bottom-up:
//!
//! * [`model`]: the system class, constraint set and modified-input algebra.
//! * [`evading`]: the smooth, admissible evading maneuver `u*`.
//! * [`zcbf`]: the rollout barrier `H_r(x) = sup_t h_r(y(t))` under `u*`,
//!   with its gradient from the variational equation.
//! * [`filter`]: the one-step safety filter with its `u*` fallback, and the
//!   position-only baseline.
//! * [`uav`]: the fixed-wing UAV instantiation.
//! * [`sim`]: closed-loop simulation, config files, CSV logs and metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evading;
pub mod filter;
pub mod integrate;
pub mod model;
pub mod models;
pub mod qp;
pub mod sim;
pub mod uav;
pub mod zcbf;

pub use error::{Error, Result};
pub use evading::EvadingConfig;
pub use filter::{ActiveSet, FilterConfig, FilterResult, Membership, MembershipReport, SafetyFilter};
pub use model::{BoxBounds, ConstraintSet, Rd2Constraint, SystemModel};
pub use zcbf::{Zcbf, ZcbfConfig, ZcbfEvaluation};

/// Dynamically sized column vector used for states and inputs.
pub type Vector = nalgebra::DVector<f64>;
/// Dynamically sized matrix used for Jacobians and weights.
pub type Matrix = nalgebra::DMatrix<f64>;
