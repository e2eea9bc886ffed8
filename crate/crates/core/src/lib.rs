//! Ground states of `-Laplacian + W` on the unit cube with Neumann boundary
//! conditions, computed by evolving a mean-field two-layer network under a
//! norm-constrained Wasserstein gradient flow.

pub mod activation;
mod assignment;
pub mod check;
pub mod cli;
pub mod config;
pub mod error;
pub mod field;
pub mod flow;
pub mod functionals;
pub mod geometry;
pub mod plot;
pub mod potentials;
pub mod reference;
pub mod sweep;

pub use error::{Error, Result};
