use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use contourflow_core::degrade::{
    apply_degradation, DegradationSampler, DegradationSamplerConfig, DegradationSpec, FilterFamily,
};
use contourflow_core::pipeline::draw_eval_spec;
use contourflow_core::AudioClip;

const SR: u32 = 44_100;

fn noise(len: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new(
        (0..len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                0.2 * v
            })
            .collect(),
        SR,
    )
    .unwrap()
}

/// Whole-clip DFT energy in [lo, hi) Hz.
fn band_energy(x: &[f64], lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (0..=n / 2)
        .filter(|&k| {
            let hz = k as f64 * SR as f64 / n as f64;
            hz >= lo && hz < hi
        })
        .map(|k| buf[k].norm_sqr())
        .sum()
}

fn spec_strategy() -> impl Strategy<Value = DegradationSpec> {
    let cutoff = 3000.0f64..16_000.0;
    prop_oneof![
        (cutoff.clone(), 15usize..128).prop_map(|(c, t)| DegradationSpec::fir(c, 2 * t + 1)),
        (cutoff.clone(), 4usize..=10).prop_map(|(c, o)| DegradationSpec::biquad(c, o)),
        (cutoff.clone(), 4usize..=10, 0.1f64..3.0)
            .prop_map(|(c, o, r)| DegradationSpec::chebyshev(c, o, r)),
        cutoff.prop_map(DegradationSpec::brick_wall),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn output_keeps_length_and_stays_finite(spec in spec_strategy(), len in 64usize..20_000, seed in 0u64..1000) {
        let clip = noise(len, seed);
        let out = apply_degradation(&clip, &spec).unwrap().clip;
        prop_assert_eq!(out.len(), len);
        prop_assert!(out.samples().iter().all(|s| s.is_finite()));
    }

    #[test]
    fn stop_band_and_pass_band(spec in spec_strategy(), seed in 0u64..1000) {
        let clip = noise(32_768, seed);
        let out = apply_degradation(&clip, &spec).unwrap().clip;
        let fc = spec.cutoff_hz;
        let nyq = SR as f64 / 2.0;
        if 1.25 * fc < nyq {
            let before = band_energy(clip.samples(), 1.25 * fc, nyq + 1.0);
            let after = band_energy(out.samples(), 1.25 * fc, nyq + 1.0);
            prop_assert!(10.0 * (before / after.max(1e-300)).log10() >= 20.0, "{:?}", spec);
        }
        let before = band_energy(clip.samples(), 0.0, 0.5 * fc);
        let after = band_energy(out.samples(), 0.0, 0.5 * fc);
        let change = (10.0 * (after / before).log10()).abs();
        let limit = if spec.family == FilterFamily::ChebyshevI { spec.ripple_db.unwrap_or(0.0) + 1.0 } else { 3.0 };
        prop_assert!(change < limit, "{:?}: {change:.2} dB", spec);
    }

    #[test]
    fn brick_wall_is_idempotent(cutoff in 1000.0f64..20_000.0, seed in 0u64..1000) {
        let spec = DegradationSpec::brick_wall(cutoff);
        let once = apply_degradation(&noise(8192, seed), &spec).unwrap().clip;
        let twice = apply_degradation(&once, &spec).unwrap().clip;
        for (a, b) in once.samples().iter().zip(twice.samples()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_draws_respect_the_bandwidth(seed in 0u64..10_000, bandwidth in 5000.0f64..22_050.0) {
        let config = DegradationSamplerConfig { seed, ..Default::default() };
        let mut a = DegradationSampler::new(config.clone()).unwrap();
        let mut b = DegradationSampler::new(config).unwrap();
        for _ in 0..8 {
            let spec = draw_eval_spec(&mut a, bandwidth, 0.75).unwrap();
            prop_assert!(spec.cutoff_hz <= 0.75 * bandwidth);
            prop_assert_eq!(spec, draw_eval_spec(&mut b, bandwidth, 0.75).unwrap());
        }
    }
}

#[test]
fn eval_draw_fails_when_nothing_fits() {
    let mut s = DegradationSampler::new(DegradationSamplerConfig::default()).unwrap();
    assert!(draw_eval_spec(&mut s, 3000.0, 0.75).is_err());
}
