//! Filesystem, CLI and evaluation companion to `sigl-core`: the PPM codec,
//! the procedural captioned-shapes corpus, checkpoint files, the training
//! loop driver, and the subcommands behind the `sigl` binary.

pub mod ckpt;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod ppm;
pub mod runner;
pub mod state;
