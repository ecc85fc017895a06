//! Attention-based transducer for streaming sequence transduction.
//!
//! The crate is `no_std` (with `alloc`) and carries all of the numerical
//! machinery: a small tape-based reverse-mode autodiff over dense tensors,
//! LSTM / pyramidal subsampling / windowed self-attention layers, the
//! encoder, prediction and chunk-attention joint networks, the transducer
//! loss over the chunk-by-label alignment grid, chunk-synchronous beam
//! search, post-training 8-bit weight quantization, synthetic data and the
//! optimizer used for training.
//!
//! File formats, wall-clock timing and the command line live in the
//! `attn-transducer` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod data;
pub mod decode;
mod error;
pub mod gradcheck;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod quant;
pub mod stream;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Parameter, Tensor};
