//! Constricting control barrier function toolkit.
//!
//! Prescribed-time recovery for input-constrained control-affine systems via
//! time-varying safety tubes: a target set `{h(x) >= 0}` is inflated by a
//! monotone constriction schedule `r(t)` so that the tube contains the initial
//! state and collapses onto the target set at a user-chosen deadline. Any
//! controller keeping the state inside the shrinking tube recovers the target
//! set on time.
//!
//! The crate provides:
//! - control-affine system and barrier primitives ([`dynamics`], [`barrier`]),
//! - constriction schedules with derivative clamping ([`schedule`]),
//! - design-time feasibility certificates: barrier authority, worst-case
//!   authority and minimum recovery time ([`certificate`]),
//! - a dense active-set QP engine ([`qpsolve`]),
//! - pointwise QP safety filters, a relative-degree-2 cascade, a
//!   prescribed-time CLF baseline and a closed-loop simulator ([`control`]),
//! - a receding-horizon SQP planner for reach-avoid problems ([`nmpc`]).

pub mod barrier;
pub mod certificate;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod nmpc;
pub mod qpsolve;
pub mod schedule;

pub use error::{Error, Result};
