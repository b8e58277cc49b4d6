//! Core numerics for spectrally-normalized generalization bounds on
//! message-passing graph neural networks.
//!
//! The crate is `no_std` (with `alloc`): everything here is pure
//! computation over dense `f64` matrices. File formats, the CLI, and
//! experiment orchestration live in the companion `graphbound-cli` crate.
//!
//! Module map:
//!
//! * [`linalg`] — dense matrices, power-iteration spectral norms, top
//!   singular triplets, stable-rank ratios.
//! * [`graph`] — undirected graphs, diffusion-matrix construction,
//!   synthetic generators, adjacency spectral-norm sanity checks.
//! * [`model`] — MPNN/GCN/GIN forward passes, smooth losses, exact
//!   backpropagation, and Gaussian weight perturbation.
//! * [`hessian`] — per-layer loss-Hessian traces (exact second
//!   differences and Hutchinson probes) plus perturbed-loss Taylor
//!   diagnostics.
//! * [`bounds`] — the generalization-bound calculators and the
//!   graph-dependence factor table.
//! * [`lowerbound`] — the worst-case complete-graph instance whose gap
//!   scales with the diffusion spectral norm.
//! * [`trainer`] — SGD/Adam loops and noise-stability optimization.
//! * [`rng`] — named, seeded random sub-streams shared by everything.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod error;
pub mod graph;
pub mod hessian;
pub mod linalg;
pub mod lowerbound;
pub mod math;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
