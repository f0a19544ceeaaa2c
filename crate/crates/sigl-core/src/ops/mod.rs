//! Numerical primitives shared by every network in the crate. Each operation
//! pairs a forward with the hand-derived backward that the gradient-check
//! harness in [`crate::grad`] verifies.

pub mod act;
pub mod conv;
pub mod dense;
pub mod gemm;
pub mod norm;
pub mod resample;
pub mod spectral;
