//! Bayesian convolutional SAR target recognition with adversarial-input
//! detection and visual explanations.
//!
//! The crate trains mean-field Gaussian Bayesian CNNs by variational
//! inference, scores inputs with the mutual information between prediction
//! and weights, calibrates a detection threshold against an FPR tolerance,
//! and localizes adversarial scatterers with guided-backprop saliency maps
//! aggregated over weight samples.

pub mod arch;
pub mod bnn;
pub mod calibration;
pub mod saliency;
pub mod error;
mod ops;
pub mod seeds;
pub mod tape;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, Result};
pub use tensor::Tensor;
