//! Deterministic laboratory for a single-stage text-conditional GAN.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation —
//! tensors, text encoding, sentence-space conditioning, the generator and
//! discriminator, hinge-loss training steps, sample-quality metrics and a
//! t-SNE projector. File formats, the training-loop driver and the CLI live
//! in the companion `sigl` crate.
//!
//! Determinism is a design requirement, not an accident: all randomness
//! flows through keyed ChaCha streams ([`rng`]), all transcendental math
//! goes through `libm`, and reductions have fixed summation order, so equal
//! seeds and configs give byte-identical results across runs and platforms.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cond;
pub mod error;
pub mod grad;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod text;
pub mod train;
pub mod tsne;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
