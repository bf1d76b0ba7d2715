//! PPG denoising, PPG-to-ABP waveform translation with a 1D U-Net, blood
//! pressure extraction, and BHS/AAMI grading.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod network;
pub mod scalar;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type ParameterSet = network::ParameterSet<f64>;
pub type ErrorSeries = evaluation::ErrorSeries<f64>;
pub type BpTriple = evaluation::BpTriple<f64>;
