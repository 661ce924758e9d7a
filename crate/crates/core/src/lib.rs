//! Entropic optimal-transport GANs, their latent posteriors and surrogate
//! sample likelihoods.

pub mod batch;
pub mod error;
pub mod experiments;
pub mod gan;
pub mod gaussian;
pub mod grad;
pub mod inference;
pub mod likelihood;
pub mod nets;
pub mod ot;
pub mod rng;
pub mod tensor;

pub use batch::SampleBatch;
pub use error::{Error, Result};
pub use tensor::Tensor;
