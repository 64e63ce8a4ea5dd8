//! Conditional flow matching: probability paths, the vector-field
//! estimator, guided sampling, training and band-copy post-processing.

pub mod checkpoint;
pub mod estimator;
pub mod guidance;
pub mod loss;
pub mod path;
pub mod postprocess;
pub mod sampler;
pub mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use estimator::{EstimatorDims, Mlp, VectorField};
pub use guidance::{cfg_zero_star, projection_scale, GuidanceConfig, ScaleMode};
pub use loss::{cfm_loss, draw_terms, loss_and_grad, LossTerms, TrainItem};
pub use path::{sample_path, PathConfig, PathKind};
pub use postprocess::postprocess_band_copy;
pub use sampler::{sample, SamplerConfig};
pub use train::{train, TrainConfig, TrainReport};

use crate::audio::AudioClip;
use crate::dsp::{
    mel_project, MelConfig, MelFilterbank, MelSpectrogram, Spectrogram, StftConfig, StftPlan,
};
use crate::error::{Error, Result};
use crate::features::{extract_from_spectrogram, ControlFeature, ControlSignal, DscParams};

/// Scalar affine map between log-mel values and model units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for MelNorm {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl MelNorm {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Self {
            mean,
            std: if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 },
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.mapv(|v| (v - self.mean) / self.std)
    }

    pub fn inverse(&self, x: &Array2<f64>) -> Array2<f64> {
        x.mapv(|v| v * self.std + self.mean)
    }
}

/// Signal-analysis settings a model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub feature: ControlFeature,
    pub dsc: DscParams,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            feature: ControlFeature::Dsc,
            dsc: DscParams::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.mel.validate(self.sample_rate)?;
        self.dsc.validate()
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn filterbank(&self) -> Result<MelFilterbank> {
        MelFilterbank::new(&self.mel, &self.stft, self.sample_rate)
    }

    pub fn check_rate(&self, clip: &AudioClip) -> Result<()> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::Shape(format!(
                "clip sample rate {} differs from model rate {}",
                clip.sample_rate(),
                self.sample_rate
            )));
        }
        Ok(())
    }

    /// Complex spectrogram and log-mel of a clip.
    pub fn analyze(&self, clip: &AudioClip) -> Result<(Spectrogram, MelSpectrogram)> {
        self.check_rate(clip)?;
        let spec = StftPlan::new(self.stft)?.spectrogram(clip)?;
        let mel = mel_project(&spec, &self.mel)?;
        Ok((spec, mel))
    }

    pub fn control(&self, spec: &Spectrogram) -> Result<ControlSignal> {
        extract_from_spectrogram(spec, self.feature, &self.dsc)
    }

    /// frames × controls in [0, 1] (Hz / Nyquist).
    pub fn normalize_control(&self, control: &ControlSignal) -> Result<Array2<f64>> {
        if control.sample_rate != self.sample_rate {
            return Err(Error::Control(format!(
                "control sample rate {} differs from model rate {}",
                control.sample_rate, self.sample_rate
            )));
        }
        let nyq = self.nyquist();
        Ok(control.values.t().mapv(|v| (v / nyq).clamp(0.0, 1.0)))
    }
}

/// A trained estimator together with everything needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub estimator: Mlp,
    pub path: PathConfig,
    pub guidance: GuidanceConfig,
    pub norm: MelNorm,
    pub analysis: AnalysisConfig,
}

impl FlowModel {
    pub fn n_mels(&self) -> usize {
        self.estimator.dims.n_mels
    }

    pub fn validate(&self) -> Result<()> {
        self.path.validate()?;
        self.guidance.validate()?;
        self.analysis.validate()?;
        if self.analysis.mel.n_mels != self.estimator.dims.n_mels {
            return Err(Error::Shape(format!(
                "estimator predicts {} bands, mel config has {}",
                self.estimator.dims.n_mels, self.analysis.mel.n_mels
            )));
        }
        if self.estimator.dims.n_controls != 1 {
            return Err(Error::Shape(format!(
                "estimator expects {} controls, models use 1",
                self.estimator.dims.n_controls
            )));
        }
        Ok(())
    }
}
