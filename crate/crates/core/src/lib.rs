//! A desk-scale laboratory for skew-product dynamics over compact bases with
//! weighted backward shifts as fibers.
//!
//! * [`base_systems`]: rotations, doubling, odometer, Furstenberg's torus skew.
//! * [`cocycles`]: integer and scalar cocycles, Birkhoff/quadrature estimates
//!   of the mean log-magnitude `γ`, boundedness scans.
//! * [`fiber_space`]: sparse sequence vectors, weight rules, weighted shifts
//!   and their right inverses, with log-domain norms.
//! * [`criterion`]: finite-horizon checks of the three Hypercyclicity
//!   Criterion conditions along an index sequence.
//! * [`skew_lab`]: skew-product iteration, exact hitting-time sets and the
//!   two regression experiments.
//! * [`cli`]: JSON-configured batch runner.

pub mod base_systems;
pub mod cli;
pub mod cocycles;
pub mod criterion;
pub mod error;
pub mod fiber_space;
pub mod numeric;
pub mod skew_lab;

pub use error::{Error, Result};
