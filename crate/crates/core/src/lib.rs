pub mod brdf;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod image;
pub mod lighting;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod render;
pub mod rng;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
