//! Spectral conditioning penalties for deep networks.
//!
//! The crate bundles a small dense linear-algebra kernel (SVD, symmetric
//! eigendecomposition, Chebyshev polynomials), the condition/moment penalty
//! terms with their analytic gradients, a capped-mixing optimizer, an MLP
//! training stack with an IDX data loader, and an executable verification
//! suite for the theory behind the penalties.
//!
//! Core numerics are generic over the scalar type (`f32`/`f64` via
//! [`Scalar`]); the experiment harness instantiates everything at `f64`.

pub mod data;
pub mod experiment;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod penalty;
pub mod rng;
pub mod verify;

mod error;
mod scalar;

pub use error::{CmrError, Result};
pub use scalar::Scalar;

/// Dense `f64` matrix, the type used throughout the experiment harness.
pub type Mat64 = linalg::Matrix<f64>;
/// Dense `f32` matrix.
pub type Mat32 = linalg::Matrix<f32>;
/// `f64` singular value decomposition.
pub type Svd64 = linalg::SpectralDecomposition<f64>;
