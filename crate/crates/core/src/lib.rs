//! Probabilistic control barrier function (CBF) safety filters for
//! discrete-time systems with additive stochastic disturbances.
//!
//! The pipeline is: a [`system::SafetyModel`] (dynamics, quadratic barrier,
//! decay rate α) and a disturbance model feed a condition builder in
//! [`conditions`], which yields [`conditions::FilterConstraint`]s; a
//! [`solver`] backend projects the nominal input onto them. [`cert`] holds
//! the risk/confidence arithmetic and [`sim`] the Monte Carlo harness.

pub mod cert;
pub mod conditions;
pub mod error;
pub mod moments;
pub mod quadratic;
pub mod sim;
pub mod solver;
pub mod system;

pub use error::{Error, Result};
