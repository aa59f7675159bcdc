//! Deformable registration with diffusion-feature similarity.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod registration;
pub mod synth;

pub use error::{DgirError, Result};
