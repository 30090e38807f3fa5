//! Learned convex regularizers for undersampled Fourier imaging.
//!
//! The crate trains an input-convex network by latent optimization, uses it
//! inside projected subgradient descent against a masked Fourier operator,
//! and ships numerical checks for the convexity, convergence and stability
//! properties the method relies on.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod forward_model;
pub mod evaluation;
pub mod icnn;
pub mod solver;
pub mod theory_verify;
pub mod training;

pub use error::{Error, Result};
