//! Reconstruction of piecewise-constant squared slowness `c⁻²` on the unit
//! square from Dirichlet-to-Neumann data of the Helmholtz equation, by
//! multi-level projected steepest descent.

pub mod banded;
pub mod constants;
pub mod derivative;
pub mod domain;
pub mod error;
pub mod forward;
pub mod optimizer;
pub mod verify;

pub use error::{Error, Result};
