//! Simulation and potential-theoretic analysis of the critical affine
//! recursion X_n = A_n X_{n-1} + B_n with E[log A] = 0.
//!
//! The crate builds a weighted point-cloud approximation of the invariant
//! Radon measure via the ladder-epoch excursion representation, estimates the
//! tail constant C_+ from annulus masses, and independently recovers the same
//! constant through the recurrent potential kernel of the centered walk
//! (singular Fourier inversion). The two routes are cross-validated.

pub mod config;
pub mod crossval;
pub mod error;
pub mod invariant;
pub mod model;
pub mod potential;
pub mod quad;
pub mod rng;
pub mod specfun;
pub mod tail;
pub mod walk;

pub use error::{Error, Result};
