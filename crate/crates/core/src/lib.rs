//! Infrared/visible image fusion with a multi-kernel attention autoencoder.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! network ([`nn`]), its training objectives ([`losses`]), test-time feature
//! fusion rules ([`fusion`]), quality metrics ([`metrics`]), image I/O
//! ([`dataio`]), an Adam training loop ([`training`]) and the command-line
//! front end ([`cli`]).

pub mod cli;
pub mod dataio;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
