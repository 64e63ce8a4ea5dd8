use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use contourflow_core::degrade::{apply_degradation, DegradationSpec};
use contourflow_core::dsp::{stft, Spectrogram, StftConfig};
use contourflow_core::features::{compute_dsc, dsc_bins, DscParams};
use contourflow_core::metrics::median;
use contourflow_core::AudioClip;

/// Straight-line contour: threshold, blur, scan, median, one loop at a time.
fn oracle_bins(mags: &Array2<f64>, p: &DscParams) -> Vec<f64> {
    let (frames, bins) = mags.dim();
    let mut peak = 0.0f64;
    for v in mags.iter() {
        if *v > peak {
            peak = *v;
        }
    }
    let radius = (4.0 * p.sigma_f).ceil() as i64;
    let mut kernel = Vec::new();
    let mut total = 0.0;
    for k in -radius..=radius {
        let g = (-0.5 * (k as f64 / p.sigma_f).powi(2)).exp();
        kernel.push(g);
        total += g;
    }
    for g in kernel.iter_mut() {
        *g /= total;
    }
    // Half-sample mirror: ... x1 x0 | x0 x1 ... x(n-1) | x(n-1) x(n-2) ...
    let mirror = |i: i64, n: i64| -> usize {
        let mut j = i;
        loop {
            if j < 0 {
                j = -j - 1;
            } else if j >= n {
                j = 2 * n - 1 - j;
            } else {
                return j as usize;
            }
        }
    };
    let mut raw = Vec::new();
    for f in 0..frames {
        let mut mask = vec![0.0; bins];
        for k in 0..bins {
            if peak > 0.0 && mags[[f, k]] / peak > p.q {
                mask[k] = 1.0;
            }
        }
        let mut edge = bins - 1;
        for k in 0..bins {
            let mut s = 0.0;
            for (j, g) in kernel.iter().enumerate() {
                s += g * mask[mirror(k as i64 + j as i64 - radius, bins as i64)];
            }
            if s < p.gamma {
                edge = k;
                break;
            }
        }
        raw.push(edge as f64);
    }
    let half = (p.m_f / 2) as i64;
    let mut out = Vec::new();
    for i in 0..frames as i64 {
        let mut w: Vec<f64> = (-half..=half)
            .map(|d| raw[mirror(i + d, frames as i64)])
            .collect();
        // Insertion sort.
        for a in 1..w.len() {
            let mut b = a;
            while b > 0 && w[b - 1] > w[b] {
                w.swap(b - 1, b);
                b -= 1;
            }
        }
        out.push(w[w.len() / 2]);
    }
    out
}

fn random_spectrogram(rng: &mut ChaCha8Rng) -> Spectrogram {
    let config = StftConfig::default();
    let frames = rng.gen_range(1..40);
    let mut s = Spectrogram::zeros(frames, config, 44_100, 512 * (frames - 1));
    for f in 0..frames {
        // A noisy band with a random edge plus sparse peaks above it.
        let edge = rng.gen_range(0..config.n_bins());
        let level: f64 = rng.gen_range(0.001..1.0);
        for k in 0..config.n_bins() {
            let base = if k < edge { level } else { level * 1e-3 };
            let jitter: f64 = StandardNormal.sample(rng);
            s.mags[[f, k]] = base * (1.0 + 0.5 * jitter).abs();
            if rng.gen_bool(0.01) {
                s.mags[[f, k]] = rng.gen_range(0.0..1.0);
            }
        }
    }
    s
}

#[test]
fn dsc_matches_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..100 {
        let spec = random_spectrogram(&mut rng);
        let params = if case % 4 == 0 {
            DscParams {
                q: rng.gen_range(1e-3..0.5),
                sigma_f: rng.gen_range(0.5..20.0),
                gamma: rng.gen_range(0.01..0.9),
                m_f: 2 * rng.gen_range(0..8) + 1,
            }
        } else {
            DscParams::default()
        };
        assert_eq!(
            dsc_bins(&spec, &params).unwrap(),
            oracle_bins(&spec.mags, &params),
            "case {case}"
        );
    }
}

fn noise(len: usize, seed: u64, sigma: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new(
        (0..len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                sigma * v
            })
            .collect(),
        44_100,
    )
    .unwrap()
}

fn median_dsc(clip: &AudioClip) -> f64 {
    median(
        &compute_dsc(
            &stft(clip, StftConfig::default()).unwrap(),
            &DscParams::default(),
        )
        .unwrap()
        .track(0),
    )
    .unwrap()
}

#[test]
fn full_band_noise_sits_at_nyquist() {
    let clip = noise(44_100, 1, 0.3);
    let track = compute_dsc(
        &stft(&clip, StftConfig::default()).unwrap(),
        &DscParams::default(),
    )
    .unwrap()
    .track(0);
    let at_top = track.iter().filter(|&&v| v == 22_050.0).count();
    assert!(at_top * 100 >= track.len() * 95, "{at_top}/{}", track.len());
}

#[test]
fn gain_above_threshold_moves_contour_at_most_one_bin() {
    let band = apply_degradation(&noise(44_100, 2, 0.2), &DegradationSpec::brick_wall(7000.0))
        .unwrap()
        .clip;
    let a = median_dsc(&band);
    let b = median_dsc(&band.scaled(2.0));
    assert!((a - b).abs() <= 44_100.0 / 2048.0, "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn contour_is_monotone_in_cutoff(seed in 0u64..1000, lo in 2000.0f64..10_000.0, gap in 1500.0f64..8000.0) {
        let clip = noise(22_050, seed, 0.25);
        let a = apply_degradation(&clip, &DegradationSpec::brick_wall(lo)).unwrap().clip;
        let b = apply_degradation(&clip, &DegradationSpec::brick_wall(lo + gap)).unwrap().clip;
        prop_assert!(median_dsc(&a) < median_dsc(&b));
    }
}
