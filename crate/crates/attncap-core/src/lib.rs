//! Core of an attention-based image caption generator for Urdu.
//!
//! Everything in this crate is pure computation over heap data: a small
//! dense-tensor library with reverse-mode differentiation, Urdu-aware text
//! normalization and vocabulary handling, the encoder/attention/GRU caption
//! model, teacher-forced training with three optimizers, greedy and beam
//! decoding, BLEU scoring, and a grammar-acceptability classifier. File
//! formats, the CLI, and anything that touches the OS live in the companion
//! `attncap` crate.
//!
//! The crate is `no_std` (with `alloc`); all arithmetic is 64-bit.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bleu;
pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod grammar;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;
pub mod vocab;

pub use error::{CoreError, Result};
pub use tape::Tape;
pub use tensor::Tensor;
