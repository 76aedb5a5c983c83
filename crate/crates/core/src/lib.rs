//! Signature-kernel scoring rules for training Neural SDE generators.
//!
//! The crate is organised bottom-up:
//!
//! - [`paths`]: piecewise-linear path data model and transformations.
//! - [`tsig`]: truncated signatures and log-signatures (brute-force kernel oracle).
//! - [`sigkernel`]: signature kernels via a finite-difference Goursat solver, with gradients.
//! - [`scores`]: kernel scores, MMD estimators and training losses.
//! - [`nsde`]: the Neural SDE generator and its training loop.
//! - [`diffengine`]: reverse-mode differentiation of the generator pipeline and Adam.
//! - [`synthdata`]: gBm and rough Bergomi simulators, series loading.
//! - [`evalstats`]: KS tests, autocorrelation and cross-correlation metrics.

pub mod diffengine;
pub mod error;
pub mod evalstats;
pub mod nsde;
pub mod paths;
pub mod rng;
pub mod scores;
pub mod sigkernel;
pub mod synthdata;
pub mod tsig;

pub use diffengine::{AdamConfig, AdamState, GradientBundle};
pub use error::{Error, Result};
pub use nsde::{Architecture, MlpParams, NeuralSdeParams, NoiseBundle, SdeDims};
pub use paths::{Path, PathBatch, StandardizationStats, TimeGrid};
pub use scores::{KernelSpec, ScoreValue};
pub use sigkernel::{GramMatrix, Scheme, SolverConfig, StaticKernel};
pub use tsig::{LogSignature, TruncatedSignature};
