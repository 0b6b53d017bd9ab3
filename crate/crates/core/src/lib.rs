//! Nonlinear system identification with occupation kernels.
//!
//! Trajectories sampled on a uniform grid are turned into linear
//! constraints on the coefficients of a vector field expanded in a basis
//! dictionary. The constraints come from pairing the Liouville operator of
//! the unknown field with occupation kernels of the observed paths in a
//! reproducing kernel Hilbert space.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod gram;
pub mod kernels;
pub mod quadrature;
pub mod streaming;
pub mod sysid;
pub mod trajectory;

pub use error::{Error, Result};
pub use kernels::{Kernel, KernelFamily};
pub use quadrature::QuadratureRule;
pub use trajectory::{Trajectory, TrajectorySet};
