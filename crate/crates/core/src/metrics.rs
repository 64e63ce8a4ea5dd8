//! Evaluation metrics: log-spectral distance, log kurtosis ratio, MFCC
//! error and control adherence.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{mel_project, stft, MelConfig, StftConfig};
use crate::error::{Error, Result};
use crate::features::{extract, ControlFeature, ControlSignal, DscParams};

/// Power floor inside the LSD logarithm.
pub const LSD_EPS: f64 = 1e-10;
/// Floor on kurtosis before the log ratio.
pub const KURTOSIS_FLOOR: f64 = 1e-6;
/// Frames quieter than this (reference RMS, dBFS) are skipped by LKR-PI.
pub const LKR_GATE_DBFS: f64 = -60.0;
/// Offset inside the adherence logarithm, in Hz.
pub const ADHERENCE_EPS_HZ: f64 = 1.0;
pub const DEFAULT_N_MFCC: usize = 13;

fn check_rates(a: &AudioClip, b: &AudioClip) -> Result<()> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::Shape(format!(
            "sample rates differ: {} vs {}",
            a.sample_rate(),
            b.sample_rate()
        )));
    }
    Ok(())
}

fn power(clip: &AudioClip) -> Result<Array2<f64>> {
    Ok(stft(clip, StftConfig::default())?.mags.mapv(|m| m * m))
}

/// `est` truncated or zero-padded to the length of `reference`.
fn aligned(reference: &AudioClip, est: &AudioClip) -> Result<AudioClip> {
    check_rates(reference, est)?;
    Ok(est.fit_to_len(reference.len()).0)
}

/// Log-spectral distance in dB (power spectra, mean over frames of the
/// per-frame RMS difference).
pub fn lsd(reference: &AudioClip, est: &AudioClip) -> Result<f64> {
    let est = aligned(reference, est)?;
    Ok(lsd_power(&power(reference)?, &power(&est)?))
}

/// LSD between two power grids of equal shape.
pub fn lsd_power(p_ref: &Array2<f64>, p_est: &Array2<f64>) -> f64 {
    let frames = p_ref.nrows().max(1) as f64;
    p_ref
        .rows()
        .into_iter()
        .zip(p_est.rows())
        .map(|(r, e)| {
            let k = r.len() as f64;
            let ss: f64 = r
                .iter()
                .zip(e.iter())
                .map(|(a, b)| {
                    let d = 10.0 * (a + LSD_EPS).log10() - 10.0 * (b + LSD_EPS).log10();
                    d * d
                })
                .sum();
            (ss / k).sqrt()
        })
        .sum::<f64>()
        / frames
}

/// Excess kurtosis of a sample (population moments).
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - mean) * (v - mean);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= 0.0 {
        return 0.0;
    }
    m4 / (m2 * m2) - 3.0
}

fn frame_rms(samples: &[f64], config: StftConfig, n_frames: usize) -> Vec<f64> {
    let half = (config.n_fft / 2) as isize;
    (0..n_frames)
        .map(|f| {
            let centre = (f * config.hop) as isize;
            let lo = (centre - half).max(0) as usize;
            let hi = ((centre + half) as usize).min(samples.len());
            if hi <= lo {
                return 0.0;
            }
            (samples[lo..hi].iter().map(|s| s * s).sum::<f64>() / (hi - lo) as f64).sqrt()
        })
        .collect()
}

/// Log kurtosis ratio: mean over frames where the reference is above
/// [`LKR_GATE_DBFS`] of ln(κ_proc / κ_ref), κ the floored excess kurtosis
/// of the frame's power spectrum. Zero when no frame passes the gate.
pub fn lkr_pi(reference: &AudioClip, processed: &AudioClip) -> Result<f64> {
    let processed = aligned(reference, processed)?;
    let pr = power(reference)?;
    let pp = power(&processed)?;
    let gate = 10f64.powf(LKR_GATE_DBFS / 20.0);
    let rms = frame_rms(reference.samples(), StftConfig::default(), pr.nrows());
    let mut total = 0.0;
    let mut count = 0usize;
    for (f, level) in rms.iter().enumerate() {
        if *level <= gate {
            continue;
        }
        let kr = excess_kurtosis(pr.row(f).as_slice().expect("contiguous")).max(KURTOSIS_FLOOR);
        let kp = excess_kurtosis(pp.row(f).as_slice().expect("contiguous")).max(KURTOSIS_FLOOR);
        total += (kp / kr).ln();
        count += 1;
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Orthonormal DCT-II of `x`, first `n` coefficients.
pub fn dct2_ortho(x: &[f64], n: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * m)).cos())
                .sum();
            let scale = if k == 0 {
                (1.0 / m).sqrt()
            } else {
                (2.0 / m).sqrt()
            };
            s * scale
        })
        .collect()
}

/// MFCCs (frames × n_mfcc) from the default log-mel spectrogram.
pub fn mfcc(clip: &AudioClip, n_mfcc: usize) -> Result<Array2<f64>> {
    let mel_cfg = MelConfig {
        f_max: clip.nyquist().min(MelConfig::default().f_max),
        ..MelConfig::default()
    };
    if n_mfcc == 0 || n_mfcc > mel_cfg.n_mels {
        return Err(Error::InvalidParam(format!(
            "n_mfcc {n_mfcc} must lie in 1..={}",
            mel_cfg.n_mels
        )));
    }
    let mel = mel_project(&stft(clip, StftConfig::default())?, &mel_cfg)?;
    let mut out = Array2::zeros((mel.n_frames(), n_mfcc));
    for (f, row) in mel.values.rows().into_iter().enumerate() {
        for (k, c) in dct2_ortho(&row.to_vec(), n_mfcc).into_iter().enumerate() {
            out[[f, k]] = c;
        }
    }
    Ok(out)
}

/// Mean squared MFCC difference over frames and coefficients.
pub fn mfcc_mse(reference: &AudioClip, est: &AudioClip, n_mfcc: usize) -> Result<f64> {
    let est = aligned(reference, est)?;
    let a = mfcc(reference, n_mfcc)?;
    let b = mfcc(&est, n_mfcc)?;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len().max(1) as f64)
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median over frames of |ln(ĉ + 1) − ln(c + 1)| between two tracks in Hz.
pub fn adherence_tracks(target: &[f64], realized: &[f64]) -> Result<f64> {
    if target.len() != realized.len() {
        return Err(Error::Shape(format!(
            "target has {} frames, realized {}",
            target.len(),
            realized.len()
        )));
    }
    let d: Vec<f64> = target
        .iter()
        .zip(realized)
        .map(|(c, r)| ((r + ADHERENCE_EPS_HZ).ln() - (c + ADHERENCE_EPS_HZ).ln()).abs())
        .collect();
    median(&d).ok_or_else(|| Error::Control("adherence of an empty control".into()))
}

/// Extracts `feature` from `audio` and scores it against the first track
/// of `target`.
pub fn adherence(
    target: &ControlSignal,
    audio: &AudioClip,
    feature: ControlFeature,
    dsc: &DscParams,
) -> Result<f64> {
    if target.sample_rate != audio.sample_rate() {
        return Err(Error::Control(format!(
            "control rate {} vs audio rate {}",
            target.sample_rate,
            audio.sample_rate()
        )));
    }
    let realized = extract(audio, feature, dsc, target.stft_config())?;
    adherence_tracks(&target.track(0), &realized.track(0))
}

/// Metrics for one clip. `adherence` is absent when no target was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub id: String,
    pub lsd_db: f64,
    pub lkr_pi: f64,
    pub mfcc_mse: f64,
    pub adherence: Option<f64>,
}

impl ClipMetrics {
    pub fn compute(
        id: &str,
        reference: &AudioClip,
        est: &AudioClip,
        target: Option<(&ControlSignal, ControlFeature, &DscParams)>,
    ) -> Result<Self> {
        Ok(Self {
            id: id.to_string(),
            lsd_db: lsd(reference, est)?,
            lkr_pi: lkr_pi(reference, est)?,
            mfcc_mse: mfcc_mse(reference, est, DEFAULT_N_MFCC)?,
            adherence: target
                .map(|(c, f, d)| adherence(c, est, f, d))
                .transpose()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub lsd_mean: f64,
    pub lsd_std: f64,
    pub lkr_pi: f64,
    pub mfcc_mse: f64,
    /// Mean over clips of the per-clip median log distance (natural log).
    pub adherence_median_logdist: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

impl MetricReport {
    pub fn from_clips(clips: Vec<ClipMetrics>) -> Self {
        let lsd_mean = mean(clips.iter().map(|c| c.lsd_db)).unwrap_or(0.0);
        let lsd_std = mean(clips.iter().map(|c| (c.lsd_db - lsd_mean).powi(2)))
            .unwrap_or(0.0)
            .sqrt();
        Self {
            lsd_mean,
            lsd_std,
            lkr_pi: mean(clips.iter().map(|c| c.lkr_pi)).unwrap_or(0.0),
            mfcc_mse: mean(clips.iter().map(|c| c.mfcc_mse)).unwrap_or(0.0),
            adherence_median_logdist: mean(clips.iter().filter_map(|c| c.adherence)),
            clips,
        }
    }

    /// One row per clip plus an aggregate row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,lsd_db,lkr_pi,mfcc_mse,adherence_ln\n");
        let adh = |a: Option<f64>| a.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.clips {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.id,
                c.lsd_db,
                c.lkr_pi,
                c.mfcc_mse,
                adh(c.adherence)
            );
        }
        let _ = writeln!(
            s,
            "ALL,{},{},{},{}",
            self.lsd_mean,
            self.lkr_pi,
            self.mfcc_mse,
            adh(self.adherence_median_logdist)
        );
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>14} {:>9} {:>10} {:>14}",
            "clip", "LSD (dB)", "LKR-PI", "MSE_MFCC", "adherence (ln)"
        );
        let adh = |a: Option<f64>| a.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        for c in &self.clips {
            let _ = writeln!(
                s,
                "{:<24} {:>14.3} {:>9.3} {:>10.3} {:>14}",
                c.id,
                c.lsd_db,
                c.lkr_pi,
                c.mfcc_mse,
                adh(c.adherence)
            );
        }
        let lsd = format!("{:.3} ± {:.3}", self.lsd_mean, self.lsd_std);
        let _ = writeln!(
            s,
            "{:<24} {:>14} {:>9.3} {:>10.3} {:>14}",
            "mean",
            lsd,
            self.lkr_pi,
            self.mfcc_mse,
            adh(self.adherence_median_logdist)
        );
        s
    }
}
