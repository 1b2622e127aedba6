//! Speaker verification with finite difference networks on raw waveforms.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: tensors, the define-by-run tape and gradient checking.
//! - [`nn`]: parameter storage and the stateful layers (conv, batch norm,
//!   fully connected, GRU).
//! - [`model`]: the intonation attention (SEO), FDN-Light / FDN-Heavy blocks,
//!   the full network, parameter counting and checkpoints.
//! - [`audio`]: WAV I/O, pre-emphasis, cropping, speed perturbation and the
//!   synthetic corpus.
//! - [`train`]: AMSGrad and the training loop.
//! - [`eval`]: embeddings, cosine scoring, EER and the perturbation sweep.

pub mod audio;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod numfmt;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
