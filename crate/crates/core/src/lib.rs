//! Causal effect estimation with a continuous treatment that is only observed
//! through classical (additive, zero-mean, independent) measurement error.
//!
//! The crate is `no_std` + `alloc`. It contains the numerical pieces only:
//!
//! * [`nnet`]: ELU multilayer perceptrons with hand-written reverse-mode
//!   gradients and an Adam optimizer.
//! * [`gpdata`]: synthetic benchmark generation from approximate Gaussian
//!   process draws.
//! * [`scm`]: the latent-variable structural causal model (CEME / CEME⁺) and
//!   the Oracle / Naive regression baselines.
//! * [`vi`]: the importance-weighted variational objective and the training
//!   loops.
//! * [`eval`]: interventional-mean RMSE, noise-scale relative errors and the
//!   average interventional distance.
//! * [`semisynth`]: semisynthetic benchmarks built on a user-supplied table.
//!
//! File formats, configuration and orchestration live in the `ceme` crate.
#![no_std]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod gpdata;
pub mod math;
pub mod nnet;
pub mod rng;
pub mod scm;
pub mod semisynth;
pub mod ser;
pub mod vi;

pub use data::Dataset;
pub use error::{Error, Result};
pub use scm::{CemeModel, FittedModel, OutcomeModel, Regressor, Variant};
