use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stft::{Spectrogram, StftConfig};
use crate::error::{Error, Result};

/// Floor applied to mel magnitudes before taking the natural log.
pub const MEL_LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            f_min: 0.0,
            f_max: 22_050.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.n_mels == 0 {
            return Err(Error::InvalidParam("n_mels must be positive".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return Err(Error::InvalidParam(format!(
                "need 0 <= f_min < f_max, got {} / {}",
                self.f_min, self.f_max
            )));
        }
        if self.f_max > nyquist {
            return Err(Error::InvalidParam(format!(
                "f_max {} exceeds Nyquist {nyquist}",
                self.f_max
            )));
        }
        Ok(())
    }
}

/// Log-magnitude mel spectrogram, frames × bands, natural log.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub mel: MelConfig,
    pub stft: StftConfig,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular band stored over its contiguous nonzero support.
#[derive(Debug, Clone, PartialEq)]
pub struct MelBand {
    pub start: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
}

/// Sparse triangular filterbank on the HTK mel scale, unit peak height.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub bands: Vec<MelBand>,
    pub n_bins: usize,
}

impl MelFilterbank {
    pub fn new(mel: &MelConfig, stft: &StftConfig, sample_rate: u32) -> Result<Self> {
        mel.validate(sample_rate)?;
        stft.validate()?;
        let n_bins = stft.n_bins();
        let (lo, hi) = (hz_to_mel(mel.f_min), hz_to_mel(mel.f_max));
        let edges: Vec<f64> = (0..mel.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel.n_mels + 1) as f64))
            .collect();
        let mut bands = Vec::with_capacity(mel.n_mels);
        for m in 0..mel.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let weights: Vec<(usize, f64)> = (0..n_bins)
                .filter_map(|k| {
                    let f = stft.bin_hz(k, sample_rate);
                    let w = ((f - left) / (center - left)).min((right - f) / (right - center));
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            let Some(&(start, _)) = weights.first() else {
                return Err(Error::InvalidParam(format!(
                    "mel band {m} ({left:.1}-{right:.1} Hz) covers no STFT bin; use fewer bands or a larger n_fft"
                )));
            };
            bands.push(MelBand {
                start,
                weights: weights.into_iter().map(|(_, w)| w).collect(),
                center_hz: center,
            });
        }
        Ok(Self { bands, n_bins })
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    pub fn centers_hz(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center_hz).collect()
    }

    /// Linear mel energies of one magnitude frame.
    pub fn apply(&self, mags: &[f64]) -> Vec<f64> {
        self.bands
            .iter()
            .map(|b| {
                b.weights
                    .iter()
                    .zip(&mags[b.start..])
                    .map(|(w, m)| w * m)
                    .sum()
            })
            .collect()
    }

    /// Transposed product: spreads per-band values back over bins.
    pub fn apply_transpose(&self, bands: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (b, &v) in self.bands.iter().zip(bands) {
            for (o, w) in out[b.start..].iter_mut().zip(&b.weights) {
                *o += w * v;
            }
        }
    }

    pub fn dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n_mels(), self.n_bins));
        for (m, b) in self.bands.iter().enumerate() {
            for (i, &w) in b.weights.iter().enumerate() {
                d[[m, b.start + i]] = w;
            }
        }
        d
    }

    /// Number of bands whose centre lies at or below `hz`.
    pub fn bands_below(&self, hz: f64) -> usize {
        self.bands.iter().take_while(|b| b.center_hz <= hz).count()
    }
}

pub fn mel_project(spec: &Spectrogram, mel: &MelConfig) -> Result<MelSpectrogram> {
    let bank = MelFilterbank::new(mel, &spec.config, spec.sample_rate)?;
    Ok(project_with(&bank, spec, mel))
}

pub(crate) fn project_with(
    bank: &MelFilterbank,
    spec: &Spectrogram,
    mel: &MelConfig,
) -> MelSpectrogram {
    let mut values = Array2::zeros((spec.n_frames(), bank.n_mels()));
    for (f, row) in spec.mags.rows().into_iter().enumerate() {
        let energies = bank.apply(row.as_slice().expect("row-major magnitudes"));
        for (m, e) in energies.into_iter().enumerate() {
            values[[f, m]] = e.max(MEL_LOG_FLOOR).ln();
        }
    }
    MelSpectrogram {
        values,
        mel: *mel,
        stft: spec.config,
        sample_rate: spec.sample_rate,
    }
}
