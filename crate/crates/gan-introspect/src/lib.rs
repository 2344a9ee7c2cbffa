//! Desk-scale workbench for a non-parallel multi-domain voice-conversion GAN
//! (gated 2-1-2D CNN generator, source-and-target conditional least-squares
//! objective) paired with an SVCCA similarity engine for comparing layer
//! representations across training checkpoints.

pub mod config;
pub mod dataio;
pub mod diff;
pub mod error;
pub mod experiments;
pub mod net;
pub mod objectives;
pub mod svcca;
pub mod trainer;

pub use error::{Error, Result};
