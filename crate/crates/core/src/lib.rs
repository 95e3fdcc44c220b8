//! Adversarial attacks on latent-variable generative models.
//!
//! The crate is organized around a small dense-tensor autodiff engine
//! ([`tensor`]), MNIST-style dataset handling ([`dataset`]), fully-connected
//! VAE / VAE-GAN / latent-classifier networks ([`models`]), training loops
//! with a binary checkpoint format ([`train`]), three gradient-based attack
//! losses with two solvers ([`attack`]), reconstruction-feedback-loop
//! evaluation metrics ([`eval`]), and deterministic PGM figure export
//! ([`figures`]).
//!
//! All floating-point model state is `f32`; gradient-check oracles run the
//! same graph code in `f64` (the engine is generic over both).

pub mod attack;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod figures;
pub mod gradsuite;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
