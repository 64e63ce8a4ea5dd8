use std::f64::consts::PI;

use contourflow_core::dsp::{istft, mel_invert, mel_project, stft, MelConfig, StftConfig};
use contourflow_core::metrics::lsd;
use contourflow_core::AudioClip;

fn harmonic_tone() -> AudioClip {
    let sr = 44_100;
    let s = (0..sr as usize)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.3 * (1..=10)
                .map(|k| (2.0 * PI * 220.0 * k as f64 * t).sin() / k as f64)
                .sum::<f64>()
        })
        .collect();
    AudioClip::new(s, sr).unwrap()
}

#[test]
fn stft_round_trip_is_exact() {
    let clip = harmonic_tone();
    let back = istft(&stft(&clip, StftConfig::default()).unwrap()).unwrap();
    let back = back.fit_to_len(clip.len()).0;
    let err = clip
        .samples()
        .iter()
        .zip(back.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
}

// Known to miss: 128 mel bands cannot resolve the upper partials, so the
// recovered magnitudes alone sit near 1.7 dB before any phase error.
#[test]
fn mel_round_trip_of_harmonic_tone_within_one_and_a_half_db() {
    let clip = harmonic_tone();
    let cfg = StftConfig::default();
    let mel = mel_project(&stft(&clip, cfg).unwrap(), &MelConfig::default()).unwrap();
    let back = mel_invert(&mel, cfg, 60).unwrap();
    let d = lsd(&clip, &back).unwrap();
    assert!(d < 1.5, "LSD {d:.3} dB");
}
