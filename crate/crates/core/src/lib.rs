//! Simulation and validation toolkit for slow/fast systems driven by
//! fractional Brownian motion.
//!
//! The crate is organised bottom-up:
//!
//! - [`fbm`] samples fractional Brownian motion exactly, mollifies it and
//!   evaluates the regularised second derivative of `|t|^{2H}`.
//! - [`chain`] handles the finite-state fast process: invariant measure,
//!   semigroup, fractional powers of the generator and joint cumulants.
//! - [`coefficients`] represents the slow coefficients `F` and `F0`.
//! - [`effective`] computes the effective diffusion, its Green–Kubo
//!   approximation, the drift correction and the covariance of the limit field.
//! - [`solver`] integrates the mollified slow/fast system and the limiting
//!   Kunita-type SDE.
//! - [`rough`] builds first and second order processes and checks their
//!   algebraic and probabilistic properties.
//! - [`graph`] implements power counting on labelled graphs.
//! - [`harness`] orchestrates Monte Carlo experiments and writes reports.

pub mod chain;
pub mod coefficients;
pub mod effective;
pub mod error;
pub mod fbm;
pub mod graph;
pub mod harness;
pub mod partitions;
pub mod quadrature;
pub mod rng;
pub mod rough;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
