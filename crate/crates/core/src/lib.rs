pub mod config;
pub mod csi;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod mask;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
