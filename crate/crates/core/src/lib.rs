//! Adversarial unsupervised domain adaptation by maximizing classifier
//! discrepancy.
//!
//! A feature generator and two differently-initialized classifier heads play
//! a minimax game: the heads are trained to disagree on unlabeled target
//! samples (exposing regions outside the source support), the generator is
//! trained to move target features where the heads agree. The crate contains:
//!
//! - [`autograd`]: a small tape-based reverse-mode differentiation engine
//!   over dense f64 tensors, with a finite-difference gradient checker;
//! - [`nn`]: feed-forward networks (linear / batch-norm / ReLU), seeded
//!   initialization, Adam and momentum-SGD, and flat binary checkpoints;
//! - [`mcd`]: the discrepancy losses and the three-step adversarial training
//!   loop, plus the one-step gradient-reversal variant;
//! - [`data`]: the two-moons generator with rotation, IDX/CSV ingestion,
//!   standardization, and seeded batching;
//! - [`theory`]: an exact verifier of the domain-adaptation risk bound on
//!   enumerable stump classes, connecting training to the bound it descends.

pub mod autograd;
pub mod data;
pub mod error;
mod linalg;
pub mod mcd;
pub mod nn;
pub mod theory;

pub use autograd::{ComputationRecord, Tensor};
pub use error::{Error, Result};

// probe hook, removed with the calibration example
#[doc(hidden)]
pub mod linalg_probe {
    pub use crate::linalg::matmul_nn;
}
