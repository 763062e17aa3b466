//! Riemannian optimization on the equilateral-triangle manifold for
//! ultrasound 3D localization.
//!
//! Three transmitters mounted on a rigid triangle of side `d` are localized
//! from their ranges to four fixed beacons. The geometry is enforced by
//! optimizing directly on the manifold of admissible triangles.

// `!(x > 0.0)` is used on purpose so NaN takes the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod manifold;
pub mod objective;
pub mod signal;
pub mod sim;
pub mod solvers;
pub mod validation;

pub use error::{Error, Result};
