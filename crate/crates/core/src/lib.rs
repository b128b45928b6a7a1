//! Splice localization with a visually attentive multi-domain network.
//!
//! The model reads an image in up to three domains (RGB, Sobel edges,
//! depth), encodes each with a truncated densely connected backbone gated by
//! triplet attention, fuses the domains with an attentive downsampler, and
//! decodes back to a full-resolution tamper-probability mask through a stack
//! of multi-receptive-field upsampling stages (transposed conv + dilated
//! convolution pyramid). Training uses focal loss and Adam; everything runs
//! on a small f64 tape-autodiff core so gradients can be checked against
//! finite differences.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod extractor;
pub mod fusion;
pub mod gradcheck;
mod kernels;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Axis, Dims, NodeId, Tape, Tensor};
