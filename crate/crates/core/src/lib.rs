//! Follow-the-Ridge dynamics for minimax and Stackelberg games.
//!
//! The crate is organised bottom-up:
//!
//! - [`vecspace`]: dense kernels and small eigensolvers,
//! - [`problems`]: the catalog of two-player objectives,
//! - [`diff`]: Hessian-vector products and numerical Jacobians of update maps,
//! - [`solvers`]: conjugate gradient and Levenberg–Marquardt damping,
//! - [`optimizers`]: every update rule behind one stateful interface,
//! - [`analysis`]: fixed-point classification, spectra and rate estimates,
//! - [`gan_mlp`]: the small MLP stack behind the mixture-of-Gaussians GAN.

pub mod analysis;
pub mod diff;
pub mod error;
pub mod gan_mlp;
pub mod optimizers;
pub mod problems;
pub mod solvers;
pub mod vecspace;

pub use error::{Result, RidgeError};
pub use vecspace::{DenseMatrix, JointPoint, Spectrum};
