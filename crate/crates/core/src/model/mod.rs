//! The enhancement network and its building blocks.

pub mod attention;
pub mod block;
pub mod layers;
mod network;
pub mod window;

pub use network::{Mode, StageTensors, Urscht, STAGES};
