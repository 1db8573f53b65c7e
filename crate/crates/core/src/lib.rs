//! Independent-component encoding models for continuous voxel time series.

pub mod aroma;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod features;
pub mod ica;
pub mod linalg;
pub mod matching;
pub mod preprocess;
pub mod stats;
pub mod synth;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
