//! Finite-difference spatial discretization of stochastic reaction-diffusion
//! systems with one-sided Lipschitz drift.
//!
//! The crate provides the discrete Neumann Laplacian, cell-averaged colored
//! noise, tamed and linearly implicit time steppers, strong-error measurement
//! between resolutions, and the Monte-Carlo pipeline for estimating the
//! probability that a FitzHugh-Nagumo pulse fails to propagate.

// NaN-rejecting guards read more clearly as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod mc;
pub mod model;
pub mod noise;
pub mod operators;
pub mod quadrature;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction, SystemState};
