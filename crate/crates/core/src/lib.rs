//! Koopman generator networks.
//!
//! Learns a state-dependent Koopman operator `K(z) = exp(dt * G(z))` in a latent space,
//! where `G(z)` is a gated convex mixture of exactly skew-adjoint and exactly
//! self-adjoint generators stored in real block form. The crate also carries the four
//! benchmark systems used to produce training data, a small reverse-mode autodiff core,
//! the Sobolev trajectory loss, LRAN and DeepKoopman baselines, a trainer, and the
//! evaluation / inspection tooling behind the `koopgen` binary.

pub mod error;
pub mod evalcli;
pub mod genops;
pub mod models;
pub mod netcore;
pub mod objective;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
