//! Low-light raw image enhancement toolkit.
//!
//! The crate covers the whole pipeline: sensor mosaics are black-level
//! corrected, amplified by a nonlinear illumination map (RIMEF), packed
//! into CFA channels and fed through multi-granulation cooperative
//! networks (chains of U-Net-style subnetworks exchanging features in
//! both directions), trained with an L1 + total-variation loss on
//! synthetic scene pairs and scored with PSNR/SSIM.
//!
//! With the default `parallel` feature the inner loops run on rayon;
//! building with `--no-default-features` selects the sequential
//! fallbacks. Results are bit-identical either way.

pub mod config;
pub mod error;
pub mod loss;
pub mod mcn;
pub mod metrics;
pub mod raw;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{check_gradients, Scalar, Tape, Tensor};
