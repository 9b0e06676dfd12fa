//! Orbital stabilization of underactuated mechanical systems with one passive
//! joint.
//!
//! A virtual holonomic constraint `q1 = Φ(q2)` is enforced by a continuous
//! feedback, which leaves a one-degree-of-freedom zero dynamics with a
//! continuum of closed orbits. One orbit is selected by its energy level and
//! stabilized by impulsive inputs applied each time the state crosses a
//! Poincaré section. The impulse gain comes from an LQR design on the
//! finite-difference linearization of the impulse-controlled return map.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod hybrid;
pub mod lqr;
pub mod models;
pub mod ode;
pub mod poincare;
pub mod quadrature;
pub mod reduction;
pub mod vhc;

pub use dynamics::{DynamicsTerms, MassPartition, MechanicalSystem};
pub use error::{IcpmError, Result};
pub use vhc::{ConstraintShape, LinearShape, SineShape, Vhc};
