//! Deterministic signal-processing kernels.

mod filters;
mod invert;
mod mel;
mod stft;

pub use filters::{gaussian_filter_1d, gaussian_kernel, median_filter_1d, symmetric_index};
pub use invert::{
    griffin_lim, mel_invert, mel_to_linear, mel_to_linear_with, GriffinLim, NNLS_ITERS,
};
pub use mel::{
    hz_to_mel, mel_project, mel_to_hz, MelConfig, MelFilterbank, MelSpectrogram, MEL_LOG_FLOOR,
};
pub use stft::{istft, stft, Spectrogram, StftConfig, StftPlan};
