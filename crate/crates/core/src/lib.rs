//! Core numerics for diffusion-decoded compression of 2-D periodic flow fields.
//!
//! Everything here is pure computation over in-memory buffers: noise schedules
//! and parameterization algebra, a reverse-mode autodiff tape with the
//! convolutional building blocks, the encoder / VAE / conditional U-Net
//! architectures, training objectives, the DDIM sampler, and the spectral
//! evaluation metrics. File formats, training loops and the command line live
//! in the `diffcoder` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod fft;
pub mod field;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod real;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use field::{FlowField, LatentField};
pub use real::Real;
pub use schedule::{DenoiserPrediction, NoiseSchedule, Parameterization, ScheduleKind};
pub use tensor::Tensor;
