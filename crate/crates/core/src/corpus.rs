//! Deterministic synthetic training audio.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, WavEncoding, DEFAULT_SAMPLE_RATE};
use crate::degrade::{apply_degradation, DegradationSpec};
use crate::dsp::{stft, StftConfig};
use crate::error::{Error, Result};

pub const PEAK_LEVEL: f64 = 0.9;
/// Clips with natural bandwidth below this are tagged band-limited.
pub const BAND_LIMITED_BELOW_HZ: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 8:1:1 by clip index.
    pub fn of_index(index: usize) -> Self {
        match index % 10 {
            8 => Self::Val,
            9 => Self::Test,
            _ => Self::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Weights over harmonic stack, filtered noise, AM/FM tone, chirp and
    /// percussive bursts.
    pub mix: [f64; 5],
    /// Range of the natural bandwidth each clip is limited to, in Hz.
    pub bandwidth_hz: [f64; 2],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_clips: 200,
            clip_seconds: 1.5,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
            mix: [1.0; 5],
            bandwidth_hz: [6_000.0, 22_050.0],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clips == 0 {
            return Err(Error::InvalidParam("corpus needs at least one clip".into()));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "clip_seconds {} must be positive",
                self.clip_seconds
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidParam("sample rate must be positive".into()));
        }
        if self.mix.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.mix.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidParam(
                "mix weights must be nonnegative and not all zero".into(),
            ));
        }
        let [lo, hi] = self.bandwidth_hz;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidParam(format!(
                "bandwidth range {lo}..={hi} is empty"
            )));
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64)
            .round()
            .max(1.0) as usize
    }
}

/// Generator recipe with the parameters drawn for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    HarmonicStack {
        f0: f64,
        partials: usize,
        tilt: f64,
    },
    FilteredNoise {
        pole: f64,
        envelope_hz: f64,
    },
    AmFm {
        carrier: f64,
        mod_hz: f64,
        index: f64,
        am_hz: f64,
        am_depth: f64,
    },
    Chirp {
        f_start: f64,
        f_end: f64,
        harmonics: usize,
    },
    Percussive {
        hits: usize,
        decay_s: f64,
        thump_hz: f64,
    },
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HarmonicStack { .. } => "harmonic_stack",
            Self::FilteredNoise { .. } => "filtered_noise",
            Self::AmFm { .. } => "am_fm",
            Self::Chirp { .. } => "chirp",
            Self::Percussive { .. } => "percussive",
        }
    }

    fn draw<R: Rng>(kind: usize, nyquist: f64, rng: &mut R) -> Self {
        match kind {
            0 => {
                let f0 = 80.0 * 5f64.powf(rng.gen_range(0.0..1.0));
                let partials = ((nyquist * 0.95 / f0) as usize).clamp(1, 120);
                Self::HarmonicStack {
                    f0,
                    partials,
                    tilt: rng.gen_range(0.3..1.2),
                }
            }
            1 => Self::FilteredNoise {
                pole: rng.gen_range(0.0..0.9),
                envelope_hz: rng.gen_range(0.5..6.0),
            },
            2 => Self::AmFm {
                carrier: rng.gen_range(200.0..3000.0),
                mod_hz: rng.gen_range(50.0..600.0),
                index: rng.gen_range(1.0..12.0),
                am_hz: rng.gen_range(0.5..8.0),
                am_depth: rng.gen_range(0.0..0.9),
            },
            3 => {
                let f_start = rng.gen_range(100.0..2000.0);
                Self::Chirp {
                    f_start,
                    f_end: rng.gen_range(2000.0..nyquist * 0.9),
                    harmonics: rng.gen_range(1..=6),
                }
            }
            _ => Self::Percussive {
                hits: rng.gen_range(2..=8),
                decay_s: rng.gen_range(0.02..0.3),
                thump_hz: rng.gen_range(40.0..200.0),
            },
        }
    }

    fn render<R: Rng>(&self, n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
        match *self {
            Self::HarmonicStack { f0, partials, tilt } => {
                let phases: Vec<f64> = (0..partials)
                    .map(|_| rng.gen_range(0.0..2.0 * PI))
                    .collect();
                harmonic_stack(f0, partials, tilt, &phases, n, sr)
            }
            Self::FilteredNoise { pole, envelope_hz } => {
                let mut y = 0.0;
                let phase = rng.gen_range(0.0..2.0 * PI);
                (0..n)
                    .map(|i| {
                        let x: f64 = StandardNormal.sample(rng);
                        y = x + pole * y;
                        let env =
                            0.6 + 0.4 * (2.0 * PI * envelope_hz * i as f64 / sr + phase).sin();
                        y * env
                    })
                    .collect()
            }
            Self::AmFm {
                carrier,
                mod_hz,
                index,
                am_hz,
                am_depth,
            } => (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let am = 1.0 - am_depth * 0.5 * (1.0 - (2.0 * PI * am_hz * t).cos());
                    am * (2.0 * PI * carrier * t + index * (2.0 * PI * mod_hz * t).sin()).sin()
                })
                .collect(),
            Self::Chirp {
                f_start,
                f_end,
                harmonics,
            } => {
                let dur = n as f64 / sr;
                let ratio = f_end / f_start;
                (0..n)
                    .map(|i| {
                        let t = i as f64 / sr;
                        // Phase of an exponential sweep.
                        let phase =
                            2.0 * PI * f_start * dur * (ratio.powf(t / dur) - 1.0) / ratio.ln();
                        (1..=harmonics)
                            .map(|h| (h as f64 * phase).sin() / h as f64)
                            .sum::<f64>()
                    })
                    .collect()
            }
            Self::Percussive {
                hits,
                decay_s,
                thump_hz,
            } => {
                let mut out = vec![0.0; n];
                for _ in 0..hits {
                    let onset = rng.gen_range(0..n);
                    let gain = rng.gen_range(0.3..1.0);
                    for (j, o) in out[onset..].iter_mut().enumerate() {
                        let t = j as f64 / sr;
                        let env = (-t / decay_s).exp();
                        if env < 1e-4 {
                            break;
                        }
                        let noise: f64 = StandardNormal.sample(rng);
                        *o += gain * env * (0.5 * noise + (2.0 * PI * thump_hz * t).sin());
                    }
                }
                out
            }
        }
    }
}

/// Broadband noise added under every source so the spectrum stays dense up
/// to the clip's bandwidth. The level is relative to the source's strongest
/// STFT bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBed {
    pub level_db: f64,
    /// One-pole tilt coefficient; 0 is white.
    pub pole: f64,
    pub envelope_hz: f64,
    /// Depth of the slow amplitude envelope in [0, 1).
    pub depth: f64,
}

impl NoiseBed {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        Self {
            level_db: rng.gen_range(-24.0..-8.0),
            pole: rng.gen_range(0.0..0.5),
            envelope_hz: rng.gen_range(0.3..4.0),
            depth: rng.gen_range(0.0..0.95),
        }
    }

    fn render<R: Rng>(&self, source_peak_bin: f64, n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
        let cfg = StftConfig::default();
        // Expected bin magnitude of unit white noise under the Hann window.
        let window_energy: f64 = cfg.window().iter().map(|w| w * w).sum();
        let gain_norm = ((1.0 - self.pole * self.pole) / (1.0 + self.pole * self.pole)).sqrt();
        let sigma = source_peak_bin * 10f64.powf(self.level_db / 20.0) / window_energy.sqrt();
        let phase = rng.gen_range(0.0..2.0 * PI);
        let mut y = 0.0;
        (0..n)
            .map(|i| {
                let x: f64 = StandardNormal.sample(rng);
                y = x + self.pole * y;
                let env = 1.0
                    - self.depth
                        * 0.5
                        * (1.0 - (2.0 * PI * self.envelope_hz * i as f64 / sr + phase).cos());
                sigma * gain_norm * y * env
            })
            .collect()
    }
}

fn peak_bin(samples: &[f64], sr: u32) -> Result<f64> {
    let spec = stft(
        &AudioClip::new(samples.to_vec(), sr)?,
        StftConfig::default(),
    )?;
    Ok(spec.mags.iter().fold(0.0f64, |m, v| m.max(*v)))
}

/// Sum of `partials` harmonics of `f0` with amplitude k^-tilt.
pub fn harmonic_stack(
    f0: f64,
    partials: usize,
    tilt: f64,
    phases: &[f64],
    n: usize,
    sr: f64,
) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            (1..=partials)
                .map(|k| {
                    (k as f64).powf(-tilt)
                        * (2.0 * PI * f0 * k as f64 * t + phases.get(k - 1).copied().unwrap_or(0.0))
                            .sin()
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusClip {
    pub entry: ManifestEntry,
    pub clip: AudioClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub index: usize,
    pub split: Split,
    pub recipe: Recipe,
    pub bed: NoiseBed,
    pub seed: u64,
    /// Brick-wall limit applied after synthesis; absent for full band.
    pub bandwidth_hz: Option<f64>,
    pub band_limited: bool,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub clips: Vec<ManifestEntry>,
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    let mut s =
        ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0xD134_2543_DE82_EF95));
    s.gen()
}

/// Generates clip `index` of the corpus; depends only on `(config, index)`.
pub fn generate_clip(config: &CorpusConfig, index: usize) -> Result<CorpusClip> {
    config.validate()?;
    let seed = clip_seed(config.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = config.sample_rate as f64;
    let nyquist = sr / 2.0;
    let total: f64 = config.mix.iter().sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut kind = config
        .mix
        .iter()
        .rposition(|w| *w > 0.0)
        .expect("validated");
    for (i, w) in config.mix.iter().enumerate() {
        if *w > 0.0 && pick < *w {
            kind = i;
            break;
        }
        pick -= w;
    }
    let recipe = Recipe::draw(kind, nyquist, &mut rng);
    let n = config.clip_len();
    let mut samples = recipe.render(n, sr, &mut rng);
    let bed = NoiseBed::draw(&mut rng);
    let source_peak = peak_bin(&samples, config.sample_rate)?.max(1e-9);
    for (s, b) in samples
        .iter_mut()
        .zip(bed.render(source_peak, n, sr, &mut rng))
    {
        *s += b;
    }
    let [lo, hi] = config.bandwidth_hz;
    let bw = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    // Bring the mix well inside [-1, 1] first so band-limiting never clips.
    let raw_peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if raw_peak > 0.0 {
        samples.iter_mut().for_each(|v| *v *= 0.5 / raw_peak);
    }
    let mut clip = AudioClip::new(samples, config.sample_rate)?;
    let bandwidth_hz = (bw < nyquist).then_some(bw);
    if let Some(b) = bandwidth_hz {
        clip = apply_degradation(&clip, &DegradationSpec::brick_wall(b))?.clip;
    }
    let peak = clip.peak();
    if peak > 0.0 {
        clip = clip.scaled(PEAK_LEVEL / peak);
    }
    let id = format!("clip_{index:05}");
    let entry = ManifestEntry {
        file: format!("{id}.wav"),
        id,
        index,
        split: Split::of_index(index),
        recipe,
        bed,
        seed,
        bandwidth_hz,
        band_limited: bw < BAND_LIMITED_BELOW_HZ,
    };
    Ok(CorpusClip { entry, clip })
}

/// Generates the whole corpus, clips in parallel.
pub fn generate(config: &CorpusConfig) -> Result<Vec<CorpusClip>> {
    config.validate()?;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(config.n_clips);
    let per = config.n_clips.div_ceil(workers);
    let parts: Vec<Result<Vec<CorpusClip>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w * per..((w + 1) * per).min(config.n_clips))
                        .map(|i| generate_clip(config, i))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("corpus worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(config.n_clips);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes each clip as 32-bit float WAV plus `manifest.json`.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    config: &CorpusConfig,
    clips: &[CorpusClip],
) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for c in clips {
        c.clip
            .write_wav(dir.join(&c.entry.file), WavEncoding::Float32)?;
    }
    let manifest = Manifest {
        config: config.clone(),
        clips: clips.iter().map(|c| c.entry.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))
}

/// Loads every clip of `split` listed in the manifest under `dir`.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Vec<CorpusClip>> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .clips
        .into_iter()
        .filter(|e| e.split == split)
        .map(|entry| {
            Ok(CorpusClip {
                clip: AudioClip::read_wav(dir.join(&entry.file))?,
                entry,
            })
        })
        .collect()
}

pub fn by_split(clips: &[CorpusClip], split: Split) -> Vec<AudioClip> {
    clips
        .iter()
        .filter(|c| c.entry.split == split)
        .map(|c| c.clip.clone())
        .collect()
}
