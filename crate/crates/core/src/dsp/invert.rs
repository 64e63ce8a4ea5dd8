//! Spectral inversion: mel → linear magnitudes by nonnegative least squares,
//! then phase recovery by Griffin-Lim.

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::mel::{MelFilterbank, MelSpectrogram, MEL_LOG_FLOOR};
use super::stft::{Spectrogram, StftConfig, StftPlan};
use crate::audio::AudioClip;
use crate::error::Result;

/// Default number of multiplicative NNLS updates per frame.
pub const NNLS_ITERS: usize = 200;

/// Recovers nonnegative linear magnitudes whose mel projection best matches
/// `mel` in the least-squares sense. Bands sitting on the log floor are
/// treated as silent. The returned spectrogram carries no phase.
///
/// The solver starts from a log-linear interpolation of the per-band levels
/// across band centres and refines it with multiplicative NNLS updates, which
/// keep the solution smooth and free of isolated zero bins.
pub fn mel_to_linear(mel: &MelSpectrogram) -> Result<Spectrogram> {
    mel_to_linear_with(mel, NNLS_ITERS)
}

/// [`mel_to_linear`] with an explicit number of NNLS updates.
pub fn mel_to_linear_with(mel: &MelSpectrogram, iters: usize) -> Result<Spectrogram> {
    let bank = MelFilterbank::new(&mel.mel, &mel.stft, mel.sample_rate)?;
    let n_bins = bank.n_bins;
    let bin_hz = mel.sample_rate as f64 / mel.stft.n_fft as f64;
    let row_sums: Vec<f64> = bank.bands.iter().map(|b| b.weights.iter().sum()).collect();
    let centers: Vec<f64> = bank.centers_hz().iter().map(|c| c / bin_hz).collect();

    let mut mags = Array2::zeros((mel.n_frames(), n_bins));
    let mut x = vec![0.0; n_bins];
    let mut numer = vec![0.0; n_bins];
    let mut denom = vec![0.0; n_bins];
    let mut support = vec![0.0; n_bins];
    for (f, row) in mel.values.rows().into_iter().enumerate() {
        let target: Vec<f64> = row
            .iter()
            .map(|&v| {
                let e = v.exp();
                if e <= MEL_LOG_FLOOR * (1.0 + 1e-9) {
                    0.0
                } else {
                    e
                }
            })
            .collect();
        // Bins touched only by silent bands stay exactly zero.
        bank.apply_transpose(&target, &mut support);
        let log_level: Vec<f64> = target
            .iter()
            .zip(&row_sums)
            .map(|(y, s)| (y / s).max(1e-300).ln())
            .collect();
        let mut band = 0;
        for (k, xk) in x.iter_mut().enumerate() {
            if support[k] <= 0.0 {
                *xk = 0.0;
                continue;
            }
            let pos = k as f64;
            while band + 1 < centers.len() && centers[band + 1] < pos {
                band += 1;
            }
            *xk = if pos <= centers[0] {
                log_level[0].exp()
            } else if band + 1 >= centers.len() {
                log_level[centers.len() - 1].exp()
            } else {
                let a = (pos - centers[band]) / (centers[band + 1] - centers[band]);
                ((1.0 - a) * log_level[band] + a * log_level[band + 1]).exp()
            };
        }
        bank.apply_transpose(&target, &mut numer);
        for _ in 0..iters {
            let projected = bank.apply(&x);
            bank.apply_transpose(&projected, &mut denom);
            for k in 0..n_bins {
                if x[k] > 0.0 && denom[k] > 0.0 {
                    x[k] *= numer[k] / denom[k];
                }
            }
        }
        for (k, v) in mags.row_mut(f).iter_mut().enumerate() {
            *v = x[k];
        }
    }
    let n_samples = mel.stft.hop * mel.n_frames().saturating_sub(1);
    Ok(Spectrogram {
        mags,
        phases: None,
        config: mel.stft,
        sample_rate: mel.sample_rate,
        n_samples,
    })
}

/// Fast Griffin-Lim phase recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GriffinLim {
    pub iters: usize,
    pub momentum: f64,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self {
            iters: 32,
            momentum: 0.99,
        }
    }
}

impl GriffinLim {
    pub fn new(iters: usize) -> Self {
        Self {
            iters,
            ..Self::default()
        }
    }

    /// Estimates phases for `spec.mags`. Initial phases come from
    /// `spec.phases` (zero when absent). Bins below `locked_bins` keep their
    /// initial phase throughout.
    pub fn run(
        &self,
        plan: &StftPlan,
        spec: &Spectrogram,
        locked_bins: usize,
    ) -> Result<Spectrogram> {
        let init = spec
            .phases
            .clone()
            .unwrap_or_else(|| Array2::zeros(spec.mags.dim()));
        let mut angles = init.mapv(|p| Complex64::from_polar(1.0, p));
        let mut rebuilt: Array2<Complex64> = Array2::zeros(spec.mags.dim());
        let alpha = self.momentum / (1.0 + self.momentum);
        let locked = locked_bins.min(spec.n_bins());
        for _ in 0..self.iters {
            let frames = &angles * &spec.mags.mapv(|m| Complex64::new(m, 0.0));
            let audio = plan.synthesize(&frames, spec.n_samples.max(1));
            let previous = std::mem::replace(&mut rebuilt, plan.analyze(&audio)?);
            ndarray::Zip::indexed(&mut angles)
                .and(&rebuilt)
                .and(&previous)
                .for_each(|(_, k), a, &r, &p| {
                    if k >= locked {
                        let v = r - p * alpha;
                        let n = v.norm();
                        *a = if n > 1e-16 {
                            v / n
                        } else {
                            Complex64::new(1.0, 0.0)
                        };
                    }
                });
        }
        Ok(Spectrogram {
            mags: spec.mags.clone(),
            phases: Some(angles.mapv(|a| a.arg())),
            config: spec.config,
            sample_rate: spec.sample_rate,
            n_samples: spec.n_samples,
        })
    }
}

/// Phase recovery for a magnitude spectrogram, zero initial phase.
pub fn griffin_lim(spec: &Spectrogram, iters: usize) -> Result<Spectrogram> {
    let plan = StftPlan::new(spec.config)?;
    let mut start = spec.clone();
    start.phases = None;
    GriffinLim::new(iters).run(&plan, &start, 0)
}

/// Mel → waveform: NNLS magnitudes, Griffin-Lim phase, inverse STFT.
pub fn mel_invert(mel: &MelSpectrogram, cfg: StftConfig, iters: usize) -> Result<AudioClip> {
    let mut mel = mel.clone();
    mel.stft = cfg;
    let plan = StftPlan::new(cfg)?;
    let linear = mel_to_linear(&mel)?;
    let phased = GriffinLim::new(iters).run(&plan, &linear, 0)?;
    plan.inverse(&phased)
}
