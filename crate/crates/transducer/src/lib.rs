//! File formats, wall-clock streaming benchmark, parallel training and the
//! command line for the attention-based transducer in
//! [`attn_transducer_core`].

pub mod checkpoint;
pub mod config;
mod error;
pub mod features;
pub mod report;
pub mod selftest;
pub mod trainer;

pub use attn_transducer_core as core;
pub use error::{Error, Result};
