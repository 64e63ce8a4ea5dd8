//! Controllable generative bandwidth extension for music.
//!
//! The crate is organised around the restoration pipeline:
//!
//! - [`dsp`]: STFT, mel projection, smoothing filters and spectral inversion.
//! - [`degrade`]: randomized lowpass degradations in four filter families.
//! - [`features`]: per-frame control signals (dynamic spectral contour,
//!   spectral centroid, spectral rolloff).
//! - [`cfm`]: conditional flow matching paths, the vector-field estimator,
//!   guided sampling and low-band copy post-processing.
//! - [`metrics`]: log-spectral distance, kurtosis ratio, MFCC error and
//!   control adherence.
//! - [`corpus`]: deterministic synthetic training audio.
//! - [`pipeline`]: end-to-end restore and evaluation shared by the CLI and
//!   the HTTP service.

pub mod audio;
pub mod cfm;
pub mod config;
pub mod corpus;
pub mod degrade;
pub mod dsp;
pub mod error;
pub mod features;
pub mod metrics;
pub mod pipeline;

pub use audio::AudioClip;
pub use error::{Error, Result};
