use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Framing parameters. The window is always a periodic Hann window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(Error::InvalidParam(format!(
                "n_fft {} must be a power of two",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidParam(format!(
                "hop {} must be in 1..={}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop
    }

    pub fn bin_hz(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.n_fft as f64
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.n_fft as f64;
        (0..self.n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }
}

/// Magnitude (and optionally phase) STFT, frames × bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mags: Array2<f64>,
    pub phases: Option<Array2<f64>>,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length of the waveform the frames were taken from.
    pub n_samples: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.mags.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.mags.ncols()
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        self.config.bin_hz(bin, self.sample_rate)
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn zeros(n_frames: usize, config: StftConfig, sample_rate: u32, n_samples: usize) -> Self {
        Self {
            mags: Array2::zeros((n_frames, config.n_bins())),
            phases: Some(Array2::zeros((n_frames, config.n_bins()))),
            config,
            sample_rate,
            n_samples,
        }
    }
}

/// Reusable FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct StftPlan {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window(),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
            config,
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    /// Complex frames, frames × bins, with numpy-style reflect padding of
    /// n_fft/2 on both sides.
    pub fn analyze(&self, samples: &[f64]) -> Result<Array2<Complex64>> {
        if samples.is_empty() {
            return Err(Error::EmptyClip);
        }
        let n_fft = self.config.n_fft;
        let pad = n_fft / 2;
        let n_frames = self.config.n_frames(samples.len());
        let n_bins = self.config.n_bins();
        let padded: Vec<f64> = (0..samples.len() + 2 * pad)
            .map(|i| samples[reflect_index(i as isize - pad as isize, samples.len())])
            .collect();

        let mut out = Array2::zeros((n_frames, n_bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let start = f * self.config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + i] * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in out.row_mut(f).iter_mut().enumerate() {
                *v = buf[k];
            }
        }
        Ok(out)
    }

    /// Weighted overlap-add inverse of [`StftPlan::analyze`], normalised by
    /// the summed squared window.
    pub fn synthesize(&self, frames: &Array2<Complex64>, n_samples: usize) -> Vec<f64> {
        let n_fft = self.config.n_fft;
        let hop = self.config.hop;
        let pad = n_fft / 2;
        let n_frames = frames.nrows();
        let total = n_fft + hop * n_frames.saturating_sub(1);
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let n_bins = self.config.n_bins();
        for f in 0..n_frames {
            let row = frames.row(f);
            for k in 0..n_bins {
                buf[k] = row[k];
            }
            // Hermitian completion; DC and Nyquist must be real.
            buf[0].im = 0.0;
            buf[n_fft / 2].im = 0.0;
            for k in 1..n_fft / 2 {
                buf[n_fft - k] = row[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = f * hop;
            for i in 0..n_fft {
                let w = self.window[i];
                acc[start + i] += buf[i].re / n_fft as f64 * w;
                norm[start + i] += w * w;
            }
        }
        (0..n_samples)
            .map(|i| {
                let j = i + pad;
                if j < total && norm[j] > 1e-11 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram> {
        let frames = self.analyze(clip.samples())?;
        Ok(Spectrogram {
            mags: frames.mapv(|c| c.norm()),
            phases: Some(frames.mapv(|c| c.arg())),
            config: self.config,
            sample_rate: clip.sample_rate(),
            n_samples: clip.len(),
        })
    }

    pub fn inverse(&self, spec: &Spectrogram) -> Result<AudioClip> {
        let phases = spec.phases.as_ref().ok_or(Error::MissingPhase)?;
        if phases.dim() != spec.mags.dim() {
            return Err(Error::Shape(format!(
                "phase grid {:?} does not match magnitude grid {:?}",
                phases.dim(),
                spec.mags.dim()
            )));
        }
        let frames = ndarray::Zip::from(&spec.mags)
            .and(phases)
            .map_collect(|&m, &p| Complex64::from_polar(m, p));
        AudioClip::new(self.synthesize(&frames, spec.n_samples), spec.sample_rate)
    }
}

/// numpy `reflect` mode: the edge sample is not repeated.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn stft(clip: &AudioClip, config: StftConfig) -> Result<Spectrogram> {
    StftPlan::new(config)?.spectrogram(clip)
}

pub fn istft(spec: &Spectrogram) -> Result<AudioClip> {
    StftPlan::new(spec.config)?.inverse(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dft_frame_mags(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn frame_count_follows_hop() {
        let cfg = StftConfig::default();
        let clip = AudioClip::silence(66_150, 44_100);
        let spec = stft(&clip, cfg).unwrap();
        assert_eq!(spec.n_frames(), 1 + 66_150 / 512);
        assert_eq!(spec.n_bins(), 1025);
    }

    #[test]
    fn impulse_gives_flat_frame_zero() {
        let mut s = vec![0.0; 4096];
        s[0] = 1.0;
        let spec = stft(&AudioClip::new(s, 44_100).unwrap(), StftConfig::default()).unwrap();
        // Sample 0 sits at the window centre of frame 0.
        let w = StftConfig::default().window()[1024];
        for &m in spec.mags.row(0) {
            assert!((m - w).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin_and_matches_direct_dft() {
        let sr = 44_100;
        let s: Vec<f64> = (0..8192)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / sr as f64).sin())
            .collect();
        let cfg = StftConfig::default();
        let spec = stft(&AudioClip::new(s.clone(), sr).unwrap(), cfg).unwrap();
        let expected_bin = (1000.0 * 2048.0 / 44_100.0_f64).round() as usize;
        assert_eq!(expected_bin, 46);
        // Frames whose window reaches into the reflect padding are skewed.
        let interior = 2..spec.n_frames() - 2;
        for (f, row) in spec
            .mags
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(f, _)| interior.contains(f))
        {
            let argmax = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            assert_eq!(argmax, expected_bin, "frame {f}");
        }
        // Frame 4 lies fully inside the signal: compare against a direct DFT.
        let w = cfg.window();
        let start = 4 * 512 - 1024;
        let frame: Vec<f64> = (0..2048).map(|i| s[start + i] * w[i]).collect();
        let oracle = dft_frame_mags(&frame);
        for (a, b) in spec.mags.row(4).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b));
        }
    }

    #[test]
    fn silence_and_empty() {
        let spec = stft(&AudioClip::silence(66_150, 44_100), StftConfig::default()).unwrap();
        assert!(spec.mags.iter().all(|&m| m == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.samples().iter().all(|&s| s == 0.0));
        assert!(matches!(
            stft(&AudioClip::silence(0, 44_100), StftConfig::default()),
            Err(Error::EmptyClip)
        ));
    }

    #[test]
    fn istft_requires_phase() {
        let mut spec = stft(&AudioClip::silence(1000, 44_100), StftConfig::default()).unwrap();
        spec.phases = None;
        assert!(matches!(istft(&spec), Err(Error::MissingPhase)));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(StftConfig {
            n_fft: 1000,
            hop: 250
        }
        .validate()
        .is_err());
        assert!(StftConfig {
            n_fft: 1024,
            hop: 2048
        }
        .validate()
        .is_err());
        assert!(StftConfig {
            n_fft: 1024,
            hop: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sweep_round_trip() {
        let sr = 44_100;
        let n = 44_100;
        let s: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                0.8 * (2.0 * PI * (100.0 * t + 0.5 * 15_000.0 * t * t)).sin()
            })
            .collect();
        let clip = AudioClip::new(s, sr).unwrap();
        let back = istft(&stft(&clip, StftConfig::default()).unwrap()).unwrap();
        let err = max_interior_err(clip.samples(), back.samples(), 2048);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn short_clips_are_reflect_padded() {
        // Shorter than the pad: the reflection wraps.
        let clip = AudioClip::new(vec![0.1, -0.3, 0.2], 8000).unwrap();
        let spec = stft(&clip, StftConfig { n_fft: 16, hop: 4 }).unwrap();
        assert_eq!(spec.n_frames(), 1);
        let back = istft(&spec).unwrap();
        for (a, b) in clip.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn max_interior_err(a: &[f64], b: &[f64], n_fft: usize) -> f64 {
        let margin = n_fft / 2;
        a.iter()
            .zip(b)
            .skip(margin)
            .take(a.len().saturating_sub(2 * margin))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_reconstructs_interior(seed in any::<u64>(), len in 600usize..6000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let clip = AudioClip::new(s, 16_000).unwrap();
            let cfg = StftConfig { n_fft: 256, hop: 64 };
            let back = istft(&stft(&clip, cfg).unwrap()).unwrap();
            let err = max_interior_err(clip.samples(), back.samples(), 256);
            prop_assert!(err < 1e-6);
        }
    }
}
