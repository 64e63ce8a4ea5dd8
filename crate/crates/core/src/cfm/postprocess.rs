//! Splices the intact low band of the input into the restored spectrum.

use ndarray::Array2;

use crate::dsp::{GriffinLim, Spectrogram, StftPlan};
use crate::error::{Error, Result};

/// Width of the linear magnitude crossfade above the cutoff bin.
pub const CROSSFADE_BINS: usize = 3;

/// Highest bin whose centre frequency is at or below `cutoff_hz`.
pub fn cutoff_bin(spec: &Spectrogram, cutoff_hz: f64) -> usize {
    ((cutoff_hz / spec.bin_hz(1)).floor().max(0.0) as usize).min(spec.n_bins() - 1)
}

/// Bins at or below `cutoff_hz` come from `input` (magnitude and phase); the
/// next [`CROSSFADE_BINS`] blend linearly into `restored`; the rest take the
/// restored magnitudes. Phases above the cutoff are refined with
/// `refine_iters` Griffin-Lim iterations started from the input phases while
/// the copied bins stay locked.
pub fn postprocess_band_copy(
    restored: &Spectrogram,
    input: &Spectrogram,
    cutoff_hz: f64,
    refine_iters: usize,
) -> Result<Spectrogram> {
    if restored.mags.dim() != input.mags.dim() {
        return Err(Error::Shape(format!(
            "restored {:?} vs input {:?}",
            restored.mags.dim(),
            input.mags.dim()
        )));
    }
    if !(cutoff_hz >= 0.0 && cutoff_hz <= input.nyquist()) {
        return Err(Error::InvalidParam(format!(
            "cutoff {cutoff_hz} Hz outside [0, {}]",
            input.nyquist()
        )));
    }
    let in_phase = input.phases.as_ref().ok_or(Error::MissingPhase)?;
    let kc = cutoff_bin(input, cutoff_hz);
    let n_bins = input.n_bins();
    if kc + 1 >= n_bins {
        return Ok(input.clone());
    }
    let mut mags = restored.mags.clone();
    for ((f, k), m) in mags.indexed_iter_mut() {
        if k <= kc {
            *m = input.mags[[f, k]];
        } else if k <= kc + CROSSFADE_BINS {
            let a = 1.0 - (k - kc) as f64 / (CROSSFADE_BINS + 1) as f64;
            *m = a * input.mags[[f, k]] + (1.0 - a) * restored.mags[[f, k]];
        }
    }
    let start = Spectrogram {
        mags,
        phases: Some(in_phase.clone()),
        config: input.config,
        sample_rate: input.sample_rate,
        n_samples: input.n_samples,
    };
    let plan = StftPlan::new(input.config)?;
    let mut out = GriffinLim::new(refine_iters).run(&plan, &start, kc + 1)?;
    let n_frames = out.n_frames();
    let phases: &mut Array2<f64> = out.phases.as_mut().expect("griffin-lim sets phases");
    for f in 0..n_frames {
        for k in 0..=kc {
            phases[[f, k]] = in_phase[[f, k]];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use crate::dsp::{stft, StftConfig};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_spec(seed: u64) -> Spectrogram {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..16_384)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                0.1 * v
            })
            .collect();
        stft(&AudioClip::new(s, 44_100).unwrap(), StftConfig::default()).unwrap()
    }

    #[test]
    fn nyquist_cutoff_returns_input() {
        let input = noise_spec(1);
        let restored = noise_spec(2);
        assert_eq!(
            postprocess_band_copy(&restored, &input, 22_050.0, 4).unwrap(),
            input
        );
    }

    #[test]
    fn zero_cutoff_keeps_restored_magnitudes_above_the_fade() {
        let input = noise_spec(1);
        let restored = noise_spec(2);
        let out = postprocess_band_copy(&restored, &input, 0.0, 0).unwrap();
        for f in 0..out.n_frames() {
            assert_eq!(out.mags[[f, 0]], input.mags[[f, 0]]);
            assert_eq!(
                out.phases.as_ref().unwrap()[[f, 0]],
                input.phases.as_ref().unwrap()[[f, 0]]
            );
            for k in 1 + CROSSFADE_BINS..out.n_bins() {
                assert_eq!(out.mags[[f, k]], restored.mags[[f, k]]);
            }
            let mid = 0.5 * input.mags[[f, 2]] + 0.5 * restored.mags[[f, 2]];
            assert!((out.mags[[f, 2]] - mid).abs() < 1e-15);
        }
    }

    #[test]
    fn low_band_copied_exactly() {
        let input = noise_spec(3);
        let mut restored = noise_spec(4);
        restored.phases = None;
        let out = postprocess_band_copy(&restored, &input, 4000.0, 8).unwrap();
        let kc = cutoff_bin(&input, 4000.0);
        assert_eq!(kc, 185);
        for f in 0..out.n_frames() {
            for k in 0..=kc {
                assert_eq!(out.mags[[f, k]], input.mags[[f, k]]);
                assert_eq!(
                    out.phases.as_ref().unwrap()[[f, k]],
                    input.phases.as_ref().unwrap()[[f, k]]
                );
            }
        }
    }

    #[test]
    fn errors() {
        let input = noise_spec(1);
        let mut no_phase = input.clone();
        no_phase.phases = None;
        assert!(matches!(
            postprocess_band_copy(&input, &no_phase, 100.0, 0),
            Err(Error::MissingPhase)
        ));
        assert!(postprocess_band_copy(&input, &input, 30_000.0, 0).is_err());
        let short = Spectrogram::zeros(3, StftConfig::default(), 44_100, 1024);
        assert!(matches!(
            postprocess_band_copy(&short, &input, 100.0, 0),
            Err(Error::Shape(_))
        ));
    }
}
