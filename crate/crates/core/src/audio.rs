//! Mono waveform container and WAV interchange.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// A mono sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

/// Sample encoding used when writing WAV data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParam("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a clip from synthesized samples, clipping to [-1, 1].
    /// Returns the clip and the number of samples that had to be clipped.
    pub fn from_synthesis(mut samples: Vec<f64>, sample_rate: u32) -> Result<(Self, usize)> {
        let clipped = clip_unit(&mut samples);
        Ok((Self::new(samples, sample_rate)?, clipped))
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Multiplies every sample by `gain` without clipping.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Truncates or zero-pads to `len` samples. Returns the new clip and the
    /// signed length change.
    pub fn fit_to_len(&self, len: usize) -> (Self, isize) {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        let delta = len as isize - self.samples.len() as isize;
        (
            Self {
                samples,
                sample_rate: self.sample_rate,
            },
            delta,
        )
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let reader = WavReader::open(path)?;
        Self::from_reader(reader)
    }

    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self> {
        let reader = WavReader::new(Cursor::new(bytes))?;
        Self::from_reader(reader)
    }

    fn from_reader<R: Read>(mut reader: WavReader<R>) -> Result<Self> {
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
            (SampleFormat::Int, bits @ 1..=32) => {
                let scale = (1_i64 << (bits - 1)) as f64;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f64 / scale))
                    .collect::<std::result::Result<_, _>>()?
            }
            (format, bits) => {
                return Err(Error::Wav(hound::Error::FormatError(match format {
                    SampleFormat::Float if bits != 32 => "only 32-bit float wav is supported",
                    _ => "unsupported wav sample format",
                })))
            }
        };
        // Downmix by averaging channels.
        let samples = interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect();
        Self::new(samples, spec.sample_rate)
    }

    pub fn write_wav(&self, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<usize> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(file, encoding)
    }

    pub fn to_wav_bytes(&self, encoding: WavEncoding) -> Result<Vec<u8>> {
        let mut cursor = Cursor::new(Vec::new());
        self.write_to(&mut cursor, encoding)?;
        Ok(cursor.into_inner())
    }

    /// Writes mono WAV data. Returns how many samples were clipped to [-1, 1].
    fn write_to<W: Write + Seek>(&self, sink: W, encoding: WavEncoding) -> Result<usize> {
        let spec = WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: match encoding {
                WavEncoding::Pcm16 => 16,
                WavEncoding::Float32 => 32,
            },
            sample_format: match encoding {
                WavEncoding::Pcm16 => SampleFormat::Int,
                WavEncoding::Float32 => SampleFormat::Float,
            },
        };
        let mut writer = WavWriter::new(sink, spec)?;
        let mut clipped = 0;
        for &s in &self.samples {
            let c = s.clamp(-1.0, 1.0);
            if c != s {
                clipped += 1;
            }
            match encoding {
                WavEncoding::Pcm16 => {
                    writer.write_sample((c * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?
                }
                WavEncoding::Float32 => writer.write_sample(c as f32)?,
            }
        }
        writer.finalize()?;
        Ok(clipped)
    }
}

/// Clamps samples to [-1, 1] in place and returns the clip count.
pub fn clip_unit(samples: &mut [f64]) -> usize {
    let mut count = 0;
    for s in samples.iter_mut() {
        if s.abs() > 1.0 {
            *s = s.clamp(-1.0, 1.0);
            count += 1;
        }
    }
    count
}
