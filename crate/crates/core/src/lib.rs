//! Device authentication codes built on RF fingerprints.
//!
//! Identical transmitters still differ in their analog front ends. This crate
//! simulates such a fleet ([`signal_sim`]), learns an undercomplete
//! convolutional autoencoder on the authorized devices' IQ windows
//! ([`autoencoder`]), and uses the distribution of per-window reconstruction
//! errors as a device authentication code that is matched with a two-sample
//! Kolmogorov-Smirnov test ([`kstest`], [`dac_protocol`]).
//!
//! ```
//! use dac_core::kstest::{ks_two_sample, Edf};
//!
//! let a = Edf::new(vec![0.1, 0.4, 0.2]).unwrap();
//! let r = ks_two_sample(&a, &a.clone());
//! assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
//! ```
//!
//! The guide in `book/` walks through each piece; its code samples are
//! compiled and run as doc-tests of this crate.

pub mod autoencoder;
pub mod dac_protocol;
pub mod error;
pub mod io;
pub mod kstest;
pub mod seed;
pub mod signal_sim;

pub use error::{DacError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/signals.md")]
    mod signals {}
    #[doc = include_str!("../../../book/src/autoencoder.md")]
    mod autoencoder {}
    #[doc = include_str!("../../../book/src/ks_test.md")]
    mod ks_test {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
