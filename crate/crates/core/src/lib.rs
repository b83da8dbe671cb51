//! Finite-difference solver and verification toolkit for divergence-form
//! elliptic systems posed in a thin gap between two graphs.
//!
//! The gap is `-ε/2 + h₂(x') < x_n < ε/2 + h₁(x')` over the tangential ball
//! `|x'| < r`. Solutions are computed on a grid whose vertical coordinate is
//! the normalized height `t ∈ [0, 1]`, and the [`analysis`] module turns the
//! discrete fields into empirical gradient-bound constants and blow-up rates
//! as the gap parameter `ε` shrinks.

pub mod analysis;
pub mod auxiliary;
pub mod error;
pub mod geometry;
pub mod mesh_solver;
pub mod operators;
pub mod poly;
pub mod verification;

pub use error::{Error, Result};
pub use poly::{parse_expression, Jet, PolynomialField};
