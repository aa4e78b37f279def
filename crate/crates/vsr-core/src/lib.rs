//! Visual speech recognition engine.
//!
//! Everything needed to train and decode a desk-scale lip reading model lives
//! here: a reverse-mode autodiff tensor engine, visual and audio front-ends,
//! a conformer encoder, a transformer decoder and character language model,
//! hybrid CTC/attention losses with prediction-based auxiliary tasks, beam
//! search with joint scoring, and a synthetic audio-visual corpus generator
//! with augmentation and curriculum scheduling.
//!
//! The crate is `no_std` (with `alloc`) so the numeric engine can be embedded
//! anywhere; file formats and the command line live in the companion crate.
//! All arithmetic is f64 internally and goes through `libm`, which keeps
//! results bit-identical across platforms for a given seed.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod beam;
pub mod conformer;
pub mod data;
pub mod decoder;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod lm;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use tape::Tape;
pub use tensor::Tensor;
