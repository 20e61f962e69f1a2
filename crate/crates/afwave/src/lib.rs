//! Numerical laboratory for local energy decay of linear waves on
//! asymptotically flat, radially symmetric backgrounds.
//!
//! The crate is organized bottom-up:
//! * [`model`] — coefficient fields, asymptotic-flatness norms, ray tracing;
//! * [`disc`] — radial grids and the quadratic operator pencil / first-order
//!   Hamiltonian reduction, plus the energy inner product;
//! * [`norms`] — the local-energy family of space(-time) norms;
//! * [`spectral`] — resolvent solves, eigenvalue surveys, Riesz projectors,
//!   and the static three-way spectral splitting;
//! * [`evolve`] — implicit-midpoint time evolution and decay diagnostics;
//! * [`perron`] — discrete dichotomy certification and the Perron fixed
//!   point construction of spectral projectors for slowly varying flows;
//! * [`carleman`] — weighted lower-bound (Carleman) inequalities on the
//!   discrete level.

pub mod disc;
pub mod error;
pub mod evolve;
pub mod export;
pub mod linalg;
pub mod model;
pub mod norms;
pub mod perron;
mod rays;
pub mod spectral;

pub use error::{Error, Result};
