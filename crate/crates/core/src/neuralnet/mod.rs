//! Minimal dense-network engine: forward/backward MLPs, loss functions,
//! Adam, and a checkpoint format.
//!
//! Everything is CPU-only and deterministic given an RNG. The engine is
//! generic over f32/f64: production models train in f32, while f64 makes
//! finite-difference gradient verification meaningful.

pub mod adam;
pub mod checkpoint;
pub mod mlp;

pub use adam::Adam;
pub use mlp::{
    cross_entropy_loss_and_delta, mse_loss_and_grad, Activation, ForwardCache, Gradients, Mlp,
    Scalar,
};
