//! IO, training loop, reports, experiment matrices and the command line
//! for DiffCoder. The numerical core lives in `diffcoder-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod eval;
pub mod fit;
pub mod matrix;
pub mod mosaic;

pub use error::{Error, Result};
