pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod csv_out;
pub mod data;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
