//! Conductivity imaging from the magnitude of one current density field.
//!
//! The crate synthesizes interior data `a = |J|` with a finite-volume
//! conductivity solver, reconstructs the potential as the minimizer of the
//! weighted least-gradient problem `min sum a |grad u|` with Dirichlet data,
//! certifies optimality through the dual problem and audits the level-set
//! structure of the result.

pub mod certificate;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod minimizer;
pub mod oracle;
pub mod pipeline;
pub mod structure;
pub mod trace;

pub use error::{Error, Result};
pub use grid::{Grid, Mask, NodeKind, ScalarField, VectorField};
