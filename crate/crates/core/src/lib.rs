//! Computational toolkit for bounded homogeneous domains.
//!
//! The crate models a homogeneous Siegel domain through its normal j-algebra,
//! realizes the simply transitive affine action of the split solvable group,
//! decomposes automorphisms into elliptic, hyperbolic and unipotent parts, builds
//! the tower of equivariant ball fibrations, and replays the Steinness argument for
//! cyclic quotients as a verifiable certificate.

pub mod analyzer;
pub mod ball;
mod error;
pub mod fibration;
pub mod io;
pub mod jalgebra;
pub mod jordan;
pub mod lie;
pub mod linalg;
pub mod siegel;

pub use error::{Error, Result};
