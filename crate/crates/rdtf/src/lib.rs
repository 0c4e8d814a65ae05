//! Finite-difference laboratory for Ricci-DeTurck flow of rough (merely
//! bounded, possibly singular) perturbations of the flat metric on a periodic
//! lattice. The crate evolves the metric gauge-fixed against the Euclidean
//! background, measures curvature and scale-invariant space-time norms, runs
//! conjugate heat kernels, and checks quantitative lower-bound estimates.

pub mod checkpoint;
pub mod config;
pub mod duhamel;
pub mod error;
pub mod fit;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod lattice;
pub mod norms;
pub mod report;
pub mod singular;

pub use error::{Error, Result};
