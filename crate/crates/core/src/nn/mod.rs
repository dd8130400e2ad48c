//! The fusion autoencoder: architecture plan, parameters, forward pass and
//! weight files.

mod config;
mod model;
mod params;
pub mod weights;

pub use config::ArchConfig;
pub use model::{autoencode, fuse_forward, pscnet_merge, Network};
pub use params::{param_specs, Init, ModelParams, ParamSpec, PRELU_INIT};
pub use weights::{load_weights, read_weights, save_weights, write_weights};
