//! Per-frame control signals: the dynamic spectral contour (DSC) and the
//! spectral centroid / rolloff baselines.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{gaussian_filter_1d, median_filter_1d, stft, Spectrogram, StftConfig};
use crate::error::{Error, Result};

/// DSC hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DscParams {
    /// Magnitude threshold, relative to the spectrogram peak.
    pub q: f64,
    /// Standard deviation of the frequency smoothing, in bins.
    pub sigma_f: f64,
    /// Threshold on the smoothed mask.
    pub gamma: f64,
    /// Temporal median window, in frames (odd).
    pub m_f: usize,
}

impl Default for DscParams {
    fn default() -> Self {
        Self {
            q: 10f64.powf(-1.6),
            sigma_f: 9.0,
            gamma: 0.07,
            m_f: 9,
        }
    }
}

impl DscParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0) {
            return Err(Error::InvalidParam(format!("dsc q {} must be > 0", self.q)));
        }
        if !(self.sigma_f >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "dsc sigma_f {} must be >= 0",
                self.sigma_f
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParam(format!(
                "dsc gamma {} must lie in (0, 1)",
                self.gamma
            )));
        }
        if self.m_f == 0 || self.m_f % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "dsc m_f {} must be odd",
                self.m_f
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlFeature {
    Dsc,
    Centroid,
    Rolloff,
}

impl ControlFeature {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dsc => "dsc",
            Self::Centroid => "centroid",
            Self::Rolloff => "rolloff",
        }
    }
}

impl std::str::FromStr for ControlFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsc" => Ok(Self::Dsc),
            "centroid" => Ok(Self::Centroid),
            "rolloff" => Ok(Self::Rolloff),
            other => Err(Error::InvalidParam(format!(
                "unknown control feature {other:?}"
            ))),
        }
    }
}

/// Control tracks in Hz, features × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub values: Array2<f64>,
    pub names: Vec<String>,
    pub sample_rate: u32,
    pub hop: usize,
    pub n_fft: usize,
}

impl ControlSignal {
    pub fn new(
        values: Array2<f64>,
        names: Vec<String>,
        sample_rate: u32,
        config: StftConfig,
    ) -> Result<Self> {
        let signal = Self {
            values,
            names,
            sample_rate,
            hop: config.hop,
            n_fft: config.n_fft,
        };
        signal.validate()?;
        Ok(signal)
    }

    pub fn single(
        name: &str,
        track: Vec<f64>,
        sample_rate: u32,
        config: StftConfig,
    ) -> Result<Self> {
        let n = track.len();
        let values = Array2::from_shape_vec((1, n), track).expect("one row");
        Self::new(values, vec![name.to_string()], sample_rate, config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.values.nrows() {
            return Err(Error::Control(format!(
                "{} names for {} feature rows",
                self.names.len(),
                self.values.nrows()
            )));
        }
        let nyquist = self.nyquist();
        if let Some(v) = self
            .values
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0 && **v <= nyquist))
        {
            return Err(Error::Control(format!(
                "control value {v} outside [0, {nyquist}] Hz"
            )));
        }
        Ok(())
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn track(&self, feature: usize) -> Vec<f64> {
        self.values.row(feature).to_vec()
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig {
            n_fft: self.n_fft,
            hop: self.hop,
        }
    }

    /// Linear-interpolation resampling to `n_frames` frames.
    pub fn resample_frames(&self, n_frames: usize) -> Self {
        let src = self.n_frames();
        let mut values = Array2::zeros((self.n_features(), n_frames));
        for (r, row) in self.values.rows().into_iter().enumerate() {
            for j in 0..n_frames {
                let pos = if n_frames > 1 {
                    j as f64 * (src - 1) as f64 / (n_frames - 1) as f64
                } else {
                    0.0
                };
                let i = (pos.floor() as usize).min(src.saturating_sub(1));
                let frac = pos - i as f64;
                let next = row[(i + 1).min(src - 1)];
                values[[r, j]] = row[i] * (1.0 - frac) + next * frac;
            }
        }
        Self {
            values,
            ..self.clone()
        }
    }

    /// Columnar text: metadata comments, a header row, one row per frame.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# contourflow control v1\n");
        let _ = writeln!(
            out,
            "# sample_rate={} hop={} n_fft={} unit=Hz",
            self.sample_rate, self.hop, self.n_fft
        );
        out.push_str("frame");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for f in 0..self.n_frames() {
            let _ = write!(out, "{f}");
            for r in 0..self.n_features() {
                let _ = write!(out, ",{}", self.values[[r, f]]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .peekable();
        while let Some(line) = lines.next_if(|l| l.starts_with('#')) {
            for kv in line.trim_start_matches('#').split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        }
        let field = |k: &str| -> Result<usize> {
            meta.get(k)
                .ok_or_else(|| Error::Control(format!("missing `{k}` metadata")))?
                .parse()
                .map_err(|_| Error::Control(format!("bad `{k}` metadata")))
        };
        let (sample_rate, hop, n_fft) =
            (field("sample_rate")? as u32, field("hop")?, field("n_fft")?);
        if let Some(unit) = meta.get("unit") {
            if unit != "Hz" {
                return Err(Error::Control(format!("unsupported unit {unit}")));
            }
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::Control("missing header row".into()))?;
        let mut cols = header.split(',').map(str::trim);
        if cols.next() != Some("frame") {
            return Err(Error::Control("header must start with `frame`".into()));
        }
        let names: Vec<String> = cols.map(str::to_string).collect();
        if names.is_empty() || names.iter().any(|n| n.is_empty()) {
            return Err(Error::Control("header names no features".into()));
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (expected, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != names.len() + 1 {
                return Err(Error::Control(format!(
                    "row {expected} has {} cells",
                    cells.len()
                )));
            }
            if cells[0].parse::<usize>().ok() != Some(expected) {
                return Err(Error::Control(format!(
                    "row {expected} has frame index {:?}",
                    cells[0]
                )));
            }
            for (c, cell) in columns.iter_mut().zip(&cells[1..]) {
                c.push(
                    cell.parse().map_err(|_| {
                        Error::Control(format!("row {expected}: bad value {cell:?}"))
                    })?,
                );
            }
        }
        let n_frames = columns[0].len();
        let values = Array2::from_shape_vec((names.len(), n_frames), columns.concat())
            .expect("rectangular columns");
        Self::new(values, names, sample_rate, StftConfig { n_fft, hop })
    }
}

/// Frequency of `bin`, with the spectrogram's sample rate.
fn bin_freqs(spec: &Spectrogram) -> Vec<f64> {
    (0..spec.n_bins()).map(|k| spec.bin_hz(k)).collect()
}

/// Per-frame contour bins after the temporal median filter.
pub fn dsc_bins(spec: &Spectrogram, params: &DscParams) -> Result<Vec<f64>> {
    params.validate()?;
    let peak = spec.mags.iter().cloned().fold(0.0, f64::max);
    let top = spec.n_bins().saturating_sub(1);
    let mut raw = Vec::with_capacity(spec.n_frames());
    for row in spec.mags.rows() {
        let mask: Vec<f64> = row
            .iter()
            .map(|&m| {
                if peak > 0.0 && m / peak > params.q {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let smooth = gaussian_filter_1d(&mask, params.sigma_f)?;
        let edge = smooth.iter().position(|&v| v < params.gamma).unwrap_or(top);
        raw.push(edge as f64);
    }
    median_filter_1d(&raw, params.m_f)
}

pub fn compute_dsc(spec: &Spectrogram, params: &DscParams) -> Result<ControlSignal> {
    let bin_hz = spec.sample_rate as f64 / spec.config.n_fft as f64;
    let track = dsc_bins(spec, params)?
        .into_iter()
        .map(|b| b * bin_hz)
        .collect();
    ControlSignal::single("dsc", track, spec.sample_rate, spec.config)
}

pub fn compute_centroid(spec: &Spectrogram) -> Result<ControlSignal> {
    let freqs = bin_freqs(spec);
    let track = spec
        .mags
        .rows()
        .into_iter()
        .map(|row| {
            let total: f64 = row.sum();
            if total > 0.0 {
                (row.iter().zip(&freqs).map(|(m, f)| m * f).sum::<f64>() / total)
                    .min(spec.nyquist())
            } else {
                0.0
            }
        })
        .collect();
    ControlSignal::single("centroid", track, spec.sample_rate, spec.config)
}

/// Lowest bin frequency whose cumulative magnitude reaches `pct` of the
/// frame total.
pub fn compute_rolloff(spec: &Spectrogram, pct: f64) -> Result<ControlSignal> {
    if !(pct > 0.0 && pct < 1.0) {
        return Err(Error::InvalidParam(format!(
            "rolloff fraction {pct} must lie in (0, 1)"
        )));
    }
    let freqs = bin_freqs(spec);
    let track = spec
        .mags
        .rows()
        .into_iter()
        .map(|row| {
            let total: f64 = row.sum();
            if total <= 0.0 {
                return 0.0;
            }
            let threshold = pct * total;
            let mut acc = 0.0;
            for (m, f) in row.iter().zip(&freqs) {
                acc += m;
                if acc >= threshold {
                    return *f;
                }
            }
            spec.nyquist()
        })
        .collect();
    ControlSignal::single("rolloff", track, spec.sample_rate, spec.config)
}

pub const DEFAULT_ROLLOFF: f64 = 0.85;

/// Multiplies every value by `factor` and clamps to [0, Nyquist].
pub fn scale_control(c: &ControlSignal, factor: f64) -> Result<ControlSignal> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidParam(format!(
            "scale factor {factor} must be positive"
        )));
    }
    let nyquist = c.nyquist();
    Ok(ControlSignal {
        values: c.values.mapv(|v| (v * factor).clamp(0.0, nyquist)),
        ..c.clone()
    })
}

pub fn extract_from_spectrogram(
    spec: &Spectrogram,
    feature: ControlFeature,
    dsc: &DscParams,
) -> Result<ControlSignal> {
    match feature {
        ControlFeature::Dsc => compute_dsc(spec, dsc),
        ControlFeature::Centroid => compute_centroid(spec),
        ControlFeature::Rolloff => compute_rolloff(spec, DEFAULT_ROLLOFF),
    }
}

pub fn extract(
    clip: &AudioClip,
    feature: ControlFeature,
    dsc: &DscParams,
    config: StftConfig,
) -> Result<ControlSignal> {
    extract_from_spectrogram(&stft(clip, config)?, feature, dsc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_from(mags: Array2<f64>) -> Spectrogram {
        let config = StftConfig::default();
        let n = mags.nrows();
        Spectrogram {
            mags,
            phases: None,
            config,
            sample_rate: 44_100,
            n_samples: 512 * (n - 1),
        }
    }

    #[test]
    fn dsc_of_silence_is_zero() {
        let c = compute_dsc(&spec_from(Array2::zeros((20, 1025))), &DscParams::default()).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dsc_of_flat_full_band_is_nyquist() {
        let c = compute_dsc(&spec_from(Array2::ones((12, 1025))), &DscParams::default()).unwrap();
        assert!(c.values.iter().all(|&v| v == 22_050.0));
    }

    #[test]
    fn dsc_step_edge_lands_above_the_step() {
        // Mask is a step at bin 300; the Gaussian pushes the sub-gamma point
        // past the step by about 1.48 sigma.
        let mut mags = Array2::zeros((10, 1025));
        mags.slice_mut(ndarray::s![.., ..300]).fill(1.0);
        let bins = dsc_bins(&spec_from(mags), &DscParams::default()).unwrap();
        assert!(bins.iter().all(|&b| b == bins[0]));
        assert!((300.0..=315.0).contains(&bins[0]), "{}", bins[0]);
    }

    #[test]
    fn centroid_and_rolloff_of_a_single_bin() {
        let mut mags = Array2::zeros((3, 1025));
        mags.column_mut(200).fill(2.0);
        mags.row_mut(1).fill(0.0);
        let s = spec_from(mags);
        let hz = 200.0 * 44_100.0 / 2048.0;
        let c = compute_centroid(&s).unwrap();
        let r = compute_rolloff(&s, 0.85).unwrap();
        assert_eq!(c.values.row(0).to_vec(), vec![hz, 0.0, hz]);
        assert_eq!(r.values.row(0).to_vec(), vec![hz, 0.0, hz]);
    }

    #[test]
    fn flat_spectrum_centroid_and_rolloff() {
        let s = spec_from(Array2::ones((2, 1025)));
        let c = compute_centroid(&s).unwrap();
        assert!((c.values[[0, 0]] - 11_025.0).abs() < 44_100.0 / 2048.0);
        let r = compute_rolloff(&s, 0.85).unwrap();
        let bin = (0.85_f64 * 1025.0).ceil() as usize - 1;
        assert_eq!(r.values[[0, 0]], bin as f64 * 44_100.0 / 2048.0);
        assert!(compute_rolloff(&s, 1.0).is_err());
    }

    #[test]
    fn scaling_clamps_to_nyquist() {
        let c =
            ControlSignal::single("dsc", vec![8000.0; 4], 44_100, StftConfig::default()).unwrap();
        assert_eq!(scale_control(&c, 1.0).unwrap(), c);
        assert!(scale_control(&c, 2.0)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 16_000.0));
        let c =
            ControlSignal::single("dsc", vec![15_000.0; 4], 44_100, StftConfig::default()).unwrap();
        assert!(scale_control(&c, 2.0)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 22_050.0));
        assert!(scale_control(&c, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let track: Vec<f64> = (0..17)
            .map(|i| i as f64 * 1234.567_891_234_5 % 22_050.0)
            .collect();
        let c = ControlSignal::single("dsc", track, 44_100, StftConfig::default()).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with("# contourflow control v1\n# sample_rate=44100 hop=512 n_fft=2048 unit=Hz\nframe,dsc\n0,0\n"));
        assert_eq!(ControlSignal::from_csv(&text).unwrap(), c);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let ok = "# sample_rate=44100 hop=512 n_fft=2048 unit=Hz\nframe,dsc\n0,10\n1,20\n";
        assert!(ControlSignal::from_csv(ok).is_ok());
        for bad in [
            "frame,dsc\n0,10\n",
            "# sample_rate=44100 hop=512 n_fft=2048\nidx,dsc\n0,10\n",
            "# sample_rate=44100 hop=512 n_fft=2048\nframe,dsc\n1,10\n",
            "# sample_rate=44100 hop=512 n_fft=2048\nframe,dsc\n0,abc\n",
            "# sample_rate=44100 hop=512 n_fft=2048\nframe,dsc\n0,-5\n",
            "# sample_rate=44100 hop=512 n_fft=2048\nframe,dsc\n0,30000\n",
            "# sample_rate=44100 hop=512 n_fft=2048 unit=bins\nframe,dsc\n0,5\n",
        ] {
            assert!(
                matches!(ControlSignal::from_csv(bad), Err(Error::Control(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn resampling_keeps_endpoints() {
        let c = ControlSignal::single(
            "dsc",
            vec![0.0, 100.0, 200.0, 300.0],
            44_100,
            StftConfig::default(),
        )
        .unwrap();
        let r = c.resample_frames(7);
        assert_eq!(
            r.track(0),
            vec![0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0]
        );
    }
}
