//! Randomized lowpass degradations producing (degraded, clean) pairs.

pub mod design;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{gaussian_filter_1d, symmetric_index, StftConfig, StftPlan};
use crate::error::{Error, Result};
use design::{butterworth_biquads, chebyshev1, sos_filter, windowed_sinc, Sos};

/// Cutoff grid: 3 kHz to 18 kHz in 1 kHz steps.
pub const CUTOFF_GRID_HZ: [f64; 16] = [
    3000.0, 4000.0, 5000.0, 6000.0, 7000.0, 8000.0, 9000.0, 10_000.0, 11_000.0, 12_000.0, 13_000.0,
    14_000.0, 15_000.0, 16_000.0, 17_000.0, 18_000.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterFamily {
    Fir,
    Biquad,
    ChebyshevI,
    BrickWall,
}

impl FilterFamily {
    pub const ALL: [FilterFamily; 4] = [Self::Fir, Self::Biquad, Self::ChebyshevI, Self::BrickWall];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fir => "fir",
            Self::Biquad => "biquad",
            Self::ChebyshevI => "chebyshev_i",
            Self::BrickWall => "brick_wall",
        }
    }
}

impl std::str::FromStr for FilterFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown filter family {s:?}")))
    }
}

/// One lowpass degradation. `order` counts FIR taps or IIR order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub family: FilterFamily,
    pub cutoff_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ripple_db: Option<f64>,
}

impl std::fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} @ {} Hz", self.family.name(), self.cutoff_hz)?;
        if let Some(o) = self.order {
            write!(f, ", order {o}")?;
        }
        if let Some(r) = self.ripple_db {
            write!(f, ", ripple {r} dB")?;
        }
        Ok(())
    }
}

impl DegradationSpec {
    pub fn brick_wall(cutoff_hz: f64) -> Self {
        Self {
            family: FilterFamily::BrickWall,
            cutoff_hz,
            order: None,
            ripple_db: None,
        }
    }

    pub fn fir(cutoff_hz: f64, taps: usize) -> Self {
        Self {
            family: FilterFamily::Fir,
            cutoff_hz,
            order: Some(taps),
            ripple_db: None,
        }
    }

    pub fn biquad(cutoff_hz: f64, order: usize) -> Self {
        Self {
            family: FilterFamily::Biquad,
            cutoff_hz,
            order: Some(order),
            ripple_db: None,
        }
    }

    pub fn chebyshev(cutoff_hz: f64, order: usize, ripple_db: f64) -> Self {
        Self {
            family: FilterFamily::ChebyshevI,
            cutoff_hz,
            order: Some(order),
            ripple_db: Some(ripple_db),
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::InvalidParam(format!(
                "{self}: cutoff must lie in (0, {nyquist}) Hz"
            )));
        }
        match self.family {
            FilterFamily::BrickWall => Ok(()),
            FilterFamily::Fir => match self.order {
                Some(n) if n % 2 == 1 => Ok(()),
                _ => Err(Error::InvalidParam(format!(
                    "{self}: FIR needs an odd tap count"
                ))),
            },
            FilterFamily::Biquad => match self.order {
                Some(n) if n >= 1 => Ok(()),
                _ => Err(Error::InvalidParam(format!("{self}: order must be >= 1"))),
            },
            FilterFamily::ChebyshevI => match (self.order, self.ripple_db) {
                (Some(n), Some(r)) if n >= 1 && r > 0.0 => Ok(()),
                _ => Err(Error::InvalidParam(format!(
                    "{self}: needs order >= 1 and ripple > 0 dB"
                ))),
            },
        }
    }

    /// Second-order sections for the IIR families.
    pub fn sections(&self, sample_rate: u32) -> Option<Sos> {
        let sr = sample_rate as f64;
        match (self.family, self.order) {
            (FilterFamily::Biquad, Some(n)) => Some(butterworth_biquads(n, self.cutoff_hz, sr)),
            (FilterFamily::ChebyshevI, Some(n)) => Some(chebyshev1(
                n,
                self.ripple_db.unwrap_or(1.0),
                self.cutoff_hz,
                sr,
            )),
            _ => None,
        }
    }

    /// Magnitude response of the designed filter at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64, sample_rate: u32) -> f64 {
        let sr = sample_rate as f64;
        match self.family {
            FilterFamily::BrickWall => {
                if freq_hz <= self.cutoff_hz {
                    1.0
                } else {
                    0.0
                }
            }
            FilterFamily::Fir => {
                let h = windowed_sinc(self.order.unwrap_or(1), self.cutoff_hz, sr);
                design::fir_response(&h, freq_hz, sr).norm()
            }
            _ => design::sos_response(&self.sections(sample_rate).unwrap_or_default(), freq_hz, sr)
                .norm(),
        }
    }
}

/// A degraded clip plus the number of samples clipped to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub clip: AudioClip,
    pub clipped: usize,
}

pub fn apply_degradation(clip: &AudioClip, spec: &DegradationSpec) -> Result<Degraded> {
    spec.validate(clip.sample_rate())?;
    let x = clip.samples();
    let sr = clip.sample_rate() as f64;
    let out = match spec.family {
        FilterFamily::BrickWall => brick_wall(x, spec.cutoff_hz, sr),
        FilterFamily::Fir => {
            let h = windowed_sinc(spec.order.expect("validated"), spec.cutoff_hz, sr);
            fir_same(x, &h)
        }
        FilterFamily::Biquad | FilterFamily::ChebyshevI => {
            let sos = spec
                .sections(clip.sample_rate())
                .expect("validated IIR spec");
            let worst = sos
                .iter()
                .map(|s| s.max_pole_magnitude())
                .fold(0.0, f64::max);
            if !(worst < 1.0) {
                return Err(Error::UnstableFilter {
                    spec: spec.to_string(),
                    pole_magnitude: worst,
                });
            }
            sos_filter(&sos, x)
        }
    };
    let (clip, clipped) = AudioClip::from_synthesis(out, clip.sample_rate())?;
    Ok(Degraded { clip, clipped })
}

/// Linear convolution with the group delay removed so the output aligns
/// with the input. The input is extended by symmetric reflection.
fn fir_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let delay = (h.len() / 2) as isize;
    let n = x.len();
    let padded: Vec<f64> = (-delay..n as isize + delay)
        .map(|i| x[symmetric_index(i, n)])
        .collect();
    let reversed: Vec<f64> = h.iter().rev().copied().collect();
    padded
        .windows(h.len())
        .map(|w| w.iter().zip(&reversed).map(|(a, b)| a * b).sum())
        .collect()
}

/// Zeroes every DFT bin of the whole clip strictly above `cutoff_hz`.
fn brick_wall(x: &[f64], cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let folded = k.min(n - k);
        if folded as f64 * sample_rate / n as f64 > cutoff_hz {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Draws degradation specs from a seeded RNG. One sampler per worker.
#[derive(Debug, Clone)]
pub struct DegradationSampler {
    config: DegradationSamplerConfig,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSamplerConfig {
    pub seed: u64,
    /// Relative weights for FIR, Biquad, ChebyshevI and BrickWall.
    pub family_weights: [f64; 4],
    /// Inclusive FIR tap range; only odd counts are drawn.
    pub fir_taps: [usize; 2],
    /// Inclusive IIR order range.
    pub iir_order: [usize; 2],
    pub ripple_db: [f64; 2],
}

impl Default for DegradationSamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            family_weights: [1.0; 4],
            fir_taps: [31, 255],
            iir_order: [2, 10],
            ripple_db: [0.1, 3.0],
        }
    }
}

impl DegradationSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.family_weights;
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParam(
                "family weights must be nonnegative and not all zero".into(),
            ));
        }
        let [t0, t1] = self.fir_taps;
        if t0 > t1 || (t0..=t1).all(|t| t % 2 == 0) {
            return Err(Error::InvalidParam(format!(
                "FIR tap range {t0}..={t1} holds no odd count"
            )));
        }
        let [o0, o1] = self.iir_order;
        if o0 == 0 || o0 > o1 {
            return Err(Error::InvalidParam(format!(
                "IIR order range {o0}..={o1} is empty"
            )));
        }
        let [r0, r1] = self.ripple_db;
        if !(r0 > 0.0 && r0 <= r1) {
            return Err(Error::InvalidParam(format!(
                "ripple range {r0}..={r1} must be positive and nonempty"
            )));
        }
        Ok(())
    }
}

impl DegradationSampler {
    pub fn new(config: DegradationSamplerConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &DegradationSamplerConfig {
        &self.config
    }

    pub fn sample_spec(&mut self) -> DegradationSpec {
        let c = &self.config;
        let total: f64 = c.family_weights.iter().sum();
        let mut pick = self.rng.gen::<f64>() * total;
        let mut family = FilterFamily::BrickWall;
        for (f, &w) in FilterFamily::ALL.iter().zip(&c.family_weights) {
            if w > 0.0 && pick < w {
                family = *f;
                break;
            }
            pick -= w;
        }
        // Floating-point leftovers fall through to the last positive weight.
        if pick >= 0.0 && c.family_weights[3] == 0.0 {
            let last = c
                .family_weights
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("validated weights");
            family = FilterFamily::ALL[last];
        }
        let cutoff_hz = CUTOFF_GRID_HZ[self.rng.gen_range(0..CUTOFF_GRID_HZ.len())];
        match family {
            FilterFamily::BrickWall => DegradationSpec::brick_wall(cutoff_hz),
            FilterFamily::Fir => {
                let lo = c.fir_taps[0] | 1;
                let count = (c.fir_taps[1] - lo) / 2 + 1;
                DegradationSpec::fir(cutoff_hz, lo + 2 * self.rng.gen_range(0..count))
            }
            FilterFamily::Biquad => DegradationSpec::biquad(
                cutoff_hz,
                self.rng.gen_range(c.iir_order[0]..=c.iir_order[1]),
            ),
            FilterFamily::ChebyshevI => {
                let order = self.rng.gen_range(c.iir_order[0]..=c.iir_order[1]);
                let ripple = if c.ripple_db[0] == c.ripple_db[1] {
                    c.ripple_db[0]
                } else {
                    self.rng.gen_range(c.ripple_db[0]..=c.ripple_db[1])
                };
                DegradationSpec::chebyshev(cutoff_hz, order, ripple)
            }
        }
    }
}

/// Threshold on the smoothed degraded/reference power ratio (-6 dB).
const CUTOFF_RATIO: f64 = 0.251_188_643_150_958;

/// Lowest frequency where the degraded clip's average power falls 6 dB
/// below the reference's. Returns Nyquist when it never does.
pub fn measure_cutoff(clip: &AudioClip, reference: &AudioClip) -> Result<f64> {
    if clip.len() != reference.len() {
        return Err(Error::Shape(format!(
            "clip has {} samples, reference {}",
            clip.len(),
            reference.len()
        )));
    }
    let config = StftConfig::default();
    let plan = StftPlan::new(config)?;
    let power = |c: &AudioClip| -> Result<Vec<f64>> {
        let frames = plan.analyze(c.samples())?;
        let n = frames.nrows() as f64;
        Ok(frames
            .columns()
            .into_iter()
            .map(|col| col.iter().map(|v| v.norm_sqr()).sum::<f64>() / n)
            .collect())
    };
    let degraded = power(clip)?;
    let refp = power(reference)?;
    let peak = refp.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(clip.nyquist());
    }
    // Bins where the reference is essentially empty carry no information.
    let ratio: Vec<f64> = degraded
        .iter()
        .zip(&refp)
        .map(|(&d, &r)| {
            if r > peak * 1e-10 {
                (d / r).min(4.0)
            } else {
                1.0
            }
        })
        .collect();
    let smooth = gaussian_filter_1d(&ratio, 2.0)?;
    Ok(smooth
        .iter()
        .position(|&v| v < CUTOFF_RATIO)
        .map(|k| config.bin_hz(k, clip.sample_rate()))
        .unwrap_or_else(|| clip.nyquist()))
}
