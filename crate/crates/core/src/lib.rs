//! Differentiable scalar-diffraction simulator for RGB diffractive networks.

pub mod checkpoint;
pub mod data;
pub mod error;
mod fft;
pub mod field;
pub mod grad;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod propagation;
pub mod train;

pub use error::{DonnError, Result};
