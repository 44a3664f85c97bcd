//! Patch-based conditional diffusion for infrared-to-visible video
//! translation, with flow-guided temporal blending of denoising trajectories.

pub mod cli;
pub mod data_io;
pub mod ddpm;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod patch;
pub mod rng;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::FrameTensor;
