//! Background-fused prototype few-shot segmentation at desk scale.
//!
//! The pipeline runs encoder → similarity calibration ([`feac`]) → channel-group
//! adversarial attention ([`hica`]) → prototypes and cosine prediction
//! ([`prototypes`]), trained with the losses in [`losses`]. [`episodes`] supplies
//! synthetic 1-way 1-shot episodes and [`spectrum`] the frequency-spectrum
//! entropy analysis.

pub mod cli;
pub mod config;
pub mod episodes;
pub mod error;
pub mod feac;
pub mod hica;
pub mod losses;
pub mod mask;
pub mod prototypes;
pub mod spectrum;
pub mod tensor;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{BroError, Result};
pub use tensor::Tensor;
