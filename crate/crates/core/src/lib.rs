//! Spiking keyword-spotting pipeline: a learnable Gabor/PCEN front-end feeding
//! two-compartment spiking encoders with lateral feedback and inhibition, and a
//! spiking classifier trained end to end with surrogate gradients.

pub mod audio;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod io;
pub mod neurons;
pub mod spikes;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
