//! Continual learning with frequency-decomposed inputs.
//!
//! Images are split by a one-level Haar wavelet transform into a low-frequency
//! band and a fused high-frequency band, each at half resolution. Two narrow
//! residual networks process the bands, exchanging features through
//! parameter-free aggregators before every downsampling stage, and a joint
//! classifier reads their concatenated features. Rehearsal strategies (ER,
//! DER++, ER-ACE, CLS-ER) replay the stored half-resolution bands from a
//! reservoir buffer.
//!
//! Everything numeric runs on the small reverse-mode engine in [`tensor`].

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rehearsal;
pub mod report;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
