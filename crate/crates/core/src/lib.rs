//! Subband spectrogram anti-spoofing toolkit.
//!
//! The pipeline: decode audio, compute STFT-derived feature views (log power
//! spectrogram, phase angle, real/imaginary spectrograms), slice named
//! frequency subbands, classify each subband with a compact SE-ResNet,
//! fuse the per-system scores in two stages, and evaluate with EER and
//! min t-DCF.

pub mod dataset;
pub mod error;
pub mod f0;
pub mod net;
pub mod scoring;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
