//! Fractional-order deep neural network classifier.
//!
//! The forward pass discretizes a Caputo fractional ODE with the L1
//! scheme, so every layer update carries a weighted memory of all
//! earlier layers. Gradients come from a discrete adjoint recursion,
//! and training runs BFGS with Armijo backtracking over minibatches.

pub mod adjoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fractional;
pub mod network;
pub mod optimizer;
pub mod trainer;

pub use error::{Error, Result};
