//! Core of the split-representation auto-encoder (SRAE).
//!
//! An SRAE encodes an image into two independent latent blocks: a spatial
//! *content* code and a spatially-constant *domain* code. The decoder
//! reconstructs from both; adversarial pressure on a latent discriminator
//! strips domain information out of the content code, which enables
//! cross-domain translation by swapping domain codes.
//!
//! This crate is `no_std` (with `alloc`); everything IO-shaped (image files,
//! checkpoint files, the CLI) lives in the companion `srae` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
