//! Device authentication codes.
//!
//! A sender windows its signal, runs every window through the shared
//! autoencoder key and appends the resulting reconstruction errors (the DAC)
//! to the message. The receiver repeats the computation with its own copy of
//! the key and compares the two error distributions with a two-sample K-S
//! test. A bit-identical body and key reproduce the DAC exactly, giving
//! `(D, p) = (0, 1)`; a sender holding different weights cannot.

mod auth;
mod dac;
mod matrix;
mod message;

pub use auth::{authenticate, AuthDecision, AuthMode, AuthPolicy, Verdict};
pub use dac::{compute_dac, compute_dac_confidential, encode_windows, latent_errors, window_errors, Dac};
pub use matrix::{evaluate_matrix, DeviceDecision, EvalOptions, KsMatrix, MatrixBlock, MatrixMode, MatrixReport};
pub use message::{build_message, DacMessage, MESSAGE_VERSION};
