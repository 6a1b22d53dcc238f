//! Channel estimation for massive MIMO-ODDM systems.
//!
//! The crate builds the effective linear model `y = Φ h + n` that maps the
//! delay-Doppler-spatial channel onto received ODDM samples, and estimates
//! `h` with a memory approximate message passing (MAMP) detector. Path
//! angles are then recovered from the estimated spatial response by a
//! DFT search with fine rotation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod fixture;
pub mod harness;
pub mod linalg;
pub mod mamp;
pub mod modem;
pub mod operator;
pub mod spectral;
pub mod waveform;

pub use error::{Error, Result};

/// Double precision complex sample.
pub type C64 = num_complex::Complex64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/angles.md")]
    mod angles {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
