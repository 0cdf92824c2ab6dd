//! Recurrence statistics of one-dimensional maps.
//!
//! The crate computes the counting process
//! `R_n(r, x) = #{1 <= j <= n : d(f^j x, x) <= r}` along exactly computed
//! orbits, evaluates the averaged Poisson limit
//! `G(tau, k) = ∫ tau^k rho^(k+1) e^(-rho tau) / k! dx`, and compares the two in
//! reproducible Monte Carlo experiments.
//!
//! Module map:
//! - [`maps`]: interval maps, invariant densities, samplers and Ulam estimates.
//! - [`orbit`]: precision-controlled orbit iteration (hardware, MPFR, exact dyadic).
//! - [`recurrence`]: recurrence and hitting counts, minimum-distance and maxima processes.
//! - [`limitlaw`]: quadrature and closed forms for the limit law, tail and summability checks.
//! - [`experiments`]: Monte Carlo harness, almost-sure runs and assumption diagnostics.
//! - [`cli`]: command-line front end.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod limitlaw;
pub mod maps;
pub mod orbit;
pub mod recurrence;
pub mod stats;

pub use error::{Error, Result};
