//! Numerical toolkit for lower bounds on the Hausdorff dimension of Julia sets of
//! (randomly perturbed) meromorphic functions, built from non-autonomous conformal
//! iterated function systems assembled out of inverse branches near poles.

#[cfg(feature = "cli")]
pub mod cli;
pub mod complex;
pub mod constructions;
pub mod error;
pub mod families;
pub mod ncifs;
pub mod poles;
pub mod verify;

pub use complex::{ComplexPoint, Disk};
pub use error::{Error, Result};
