//! Numerical laboratory for approximate two-sphere one-cylinder inequalities
//! for parabolic equations with rapidly oscillating periodic coefficients.
//!
//! The crate ties together five pieces of machinery:
//!
//! * [`coeff_cell`] — periodic coefficient fields, corrector cell problems,
//!   effective (homogenized) tensors, and the torus potential cell problem;
//! * [`geometry`] — the factor S with S A S^T = I and the ellipsoids
//!   E_r = { |S x| < r } adapted to the effective tensor;
//! * [`kernels`] — the explicit homogenized fundamental solution, a numeric
//!   surrogate for the oscillating kernel, and asymptotic-gap reports;
//! * [`chebyshev`] — Chebyshev-node Lagrange extrapolation with residue
//!   error control;
//! * [`pdesolve`] / [`smallness`] — finite-difference cylinder solves,
//!   solution ensembles, and verification of the propagation-of-smallness
//!   inequalities built from the pieces above.
//!
//! The `config` and `harness` modules expose the experiment CLI.

pub mod chebyshev;
pub mod coeff_cell;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod pdesolve;
pub mod smallness;
pub mod linalg;

pub use error::{Error, Result};
