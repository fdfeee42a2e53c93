//! Spatio-temporal cross network for video smoke detection.
//!
//! The crate is organised bottom-up: [`tensor`] provides f64 tensors with a
//! reverse-mode tape, [`nn`] the layers, [`video`] clip handling and residual
//! frames, [`model`] the two-path network, [`train`] the optimizer and
//! metrics, and [`explain`] Grad-CAM.

pub mod check;
mod codec;
pub mod error;
pub mod explain;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
