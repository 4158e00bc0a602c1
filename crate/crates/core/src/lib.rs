//! Pseudo-marginal Metropolis–Hastings toolkit.
//!
//! * [`noise`]: multiplicative noise models for the likelihood estimator.
//! * [`targets`]: target densities and symmetric proposals.
//! * [`kernels`]: MH, pseudo-marginal, handicapped and correlated kernels.
//! * [`bounds`]: closed-form and numerical asymptotic-variance bounds.
//! * [`diagnostics`]: noise-variance tuning and asymptotic-variance estimation.
//! * [`harness`]: experiment drivers writing CSV results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod special;
pub mod targets;

pub use error::{Error, Result};
pub use kernels::{ChainConfig, ChainState, ChainTrace, KernelKind, KernelSpec};
pub use noise::{LogVariance, NoiseModel};
pub use targets::{ProposalKernel, TargetModel};
