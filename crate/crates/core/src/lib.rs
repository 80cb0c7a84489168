//! Optimal transport of vector measures in divergence form.
//!
//! The crate discretizes bounded boxes into regular grids and solves the
//! minimal-flux problem `min ‖M‖₁ subject to −div M = μ` for vector-valued
//! measures `μ`, together with its Lipschitz dual, the `L^q` variant for
//! densities, and the polar-cone membership tests built on top of both.
//!
//! Module map:
//!
//! * [`schatten`]: small dense matrices, Jacobi SVD, Schatten norms, matrix
//!   Hölder slack, dual witnesses and equality-case certificates.
//! * [`grid`]: grids, measures and fields, the discrete gradient and its exact
//!   negative adjoint, integration pairings.
//! * [`beckmann`]: primal–dual solver for the total-variation flux problem and
//!   the closed-form 1-D oracle.
//! * [`lq`]: primal–dual solver for the `L^q` flux problem, the Neumann oracle
//!   for `p = q = 2` and the directional derivative of the `L^p` gradient norm.
//! * [`cones`]: membership tests for the dual cone of monotone maps and for
//!   polar cones of tangent cones of `C¹` and Sobolev unit balls.
//! * [`io`]: versioned JSON instance files and CSV field dumps.
//! * [`generate`]: seeded instance generators.

pub mod beckmann;
pub mod cones;
pub mod error;
pub mod generate;
pub mod grid;
pub mod io;
pub mod lq;
pub mod schatten;

pub use error::{Error, Result};

/// Version tag carried by every file format.
pub const FORMAT_VERSION: &str = "vecbeck/1";
