//! Underwater image enhancement with a U-Net of reinforced Swin-conv transformer blocks.
//!
//! The crate covers the network ([`model`]), its training objective ([`losses`]),
//! image quality metrics ([`metrics`]), dataset handling ([`data`]) and the
//! optimization loop with checkpoints and the ablation grid ([`trainer`]).

pub mod config;
pub mod data;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod trainer;

pub use config::{ModelConfig, RunConfig};
pub use error::{Category, Error, Result};
pub use model::{Mode, Urscht};
pub use params::ParamStore;
