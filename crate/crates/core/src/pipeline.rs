//! End-to-end restoration shared by the command line and the HTTP service.

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::cfm::{postprocess_band_copy, FlowModel, GuidanceConfig, SamplerConfig};
use crate::corpus::CorpusClip;
use crate::degrade::{
    apply_degradation, DegradationSampler, DegradationSamplerConfig, DegradationSpec,
};
use crate::dsp::{mel_to_linear, StftPlan};
use crate::error::{Error, Result};
use crate::features::{compute_dsc, scale_control, ControlSignal};
use crate::metrics::{adherence_tracks, lsd, median};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestoreRequest {
    pub w: f64,
    pub steps: usize,
    /// Multiplier applied to the control before restoration.
    pub scale: f64,
    /// Band-copy splice point; estimated from the input when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff_hz: Option<f64>,
    pub gl_iters: usize,
    pub seed: u64,
}

impl Default for RestoreRequest {
    fn default() -> Self {
        Self {
            w: 1.0,
            steps: 1,
            scale: 1.0,
            cutoff_hz: None,
            gl_iters: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoreOutcome {
    pub clip: AudioClip,
    /// Samples clipped to [-1, 1] after inverse STFT.
    pub clipped: usize,
    /// Control after scaling, the one restoration was steered with.
    pub target: ControlSignal,
    /// Control re-extracted from the restored audio.
    pub realized: ControlSignal,
    pub adherence: f64,
    pub lsd_vs_input: f64,
    pub cutoff_hz: f64,
    pub boundary: usize,
}

/// Largest frame-count mismatch [`fit_control`] repairs by interpolation.
pub const MAX_FRAME_SLACK: usize = 2;

/// Brings a control to `n_frames` frames. Counts within
/// [`MAX_FRAME_SLACK`] are linearly resampled, larger gaps are an error.
pub fn fit_control(control: &ControlSignal, n_frames: usize) -> Result<ControlSignal> {
    let have = control.n_frames();
    if have == n_frames {
        return Ok(control.clone());
    }
    if have < 2 || have.abs_diff(n_frames) > MAX_FRAME_SLACK {
        return Err(Error::Control(format!(
            "control has {have} frames, clip has {n_frames}"
        )));
    }
    Ok(control.resample_frames(n_frames))
}

/// Splice point from the input alone: the median DSC of the clip.
pub fn estimate_cutoff(model: &FlowModel, input: &AudioClip) -> Result<f64> {
    let spec = StftPlan::new(model.analysis.stft)?.spectrogram(input)?;
    let track = compute_dsc(&spec, &model.analysis.dsc)?.track(0);
    Ok(median(&track).unwrap_or(0.0))
}

/// Extracts the model's control feature from a clip.
pub fn extract_control(model: &FlowModel, clip: &AudioClip) -> Result<ControlSignal> {
    let (spec, _) = model.analysis.analyze(clip)?;
    model.analysis.control(&spec)
}

pub fn restore_clip(
    model: &FlowModel,
    input: &AudioClip,
    control: &ControlSignal,
    req: &RestoreRequest,
) -> Result<RestoreOutcome> {
    model.validate()?;
    let a = &model.analysis;
    let (spec_in, mel_in) = a.analyze(input)?;
    if control.n_frames() != mel_in.n_frames() {
        return Err(Error::Control(format!(
            "control has {} frames, clip has {}",
            control.n_frames(),
            mel_in.n_frames()
        )));
    }
    if control.stft_config() != a.stft {
        return Err(Error::Control(format!(
            "control framing {:?} differs from model framing {:?}",
            control.stft_config(),
            a.stft
        )));
    }
    let target = scale_control(control, req.scale)?;
    let cutoff_hz = match req.cutoff_hz {
        Some(c) if c.is_finite() && (0.0..=a.nyquist()).contains(&c) => c,
        Some(c) => {
            return Err(Error::InvalidParam(format!(
                "cutoff {c} Hz outside [0, {}]",
                a.nyquist()
            )))
        }
        None => estimate_cutoff(model, input)?,
    };
    let boundary = a.filterbank()?.bands_below(cutoff_hz);
    let guidance = GuidanceConfig {
        w: req.w,
        ..model.guidance
    };
    let sampler = SamplerConfig { steps: req.steps };
    let mel_out = model.restore_mel(&mel_in, &target, &guidance, &sampler, boundary, req.seed)?;
    let mut linear = mel_to_linear(&mel_out)?;
    linear.n_samples = spec_in.n_samples;
    let spliced = postprocess_band_copy(&linear, &spec_in, cutoff_hz, req.gl_iters)?;
    let raw = StftPlan::new(a.stft)?.inverse(&spliced)?;
    let (clip, clipped) = AudioClip::from_synthesis(
        raw.fit_to_len(input.len()).0.into_samples(),
        input.sample_rate(),
    )?;
    let realized = extract_control(model, &clip)?;
    let adherence = adherence_tracks(&target.track(0), &realized.track(0))?;
    let lsd_vs_input = lsd(input, &clip)?;
    Ok(RestoreOutcome {
        clip,
        clipped,
        target,
        realized,
        adherence,
        lsd_vs_input,
        cutoff_hz,
        boundary,
    })
}

/// How test clips are corrupted for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub degradation: DegradationSamplerConfig,
    /// Specs are redrawn until the cutoff is at most this fraction of the
    /// clip's natural bandwidth, so every test clip actually loses content.
    pub max_cutoff_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            degradation: DegradationSamplerConfig {
                seed: 99,
                ..Default::default()
            },
            max_cutoff_fraction: 0.75,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.degradation.validate()?;
        if !(self.max_cutoff_fraction > 0.0 && self.max_cutoff_fraction <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "max_cutoff_fraction {} must lie in (0, 1]",
                self.max_cutoff_fraction
            )));
        }
        Ok(())
    }
}

const MAX_REDRAWS: usize = 10_000;

/// Draws a spec whose cutoff lies at or below `fraction · bandwidth_hz`.
pub fn draw_eval_spec(
    sampler: &mut DegradationSampler,
    bandwidth_hz: f64,
    fraction: f64,
) -> Result<DegradationSpec> {
    (0..MAX_REDRAWS)
        .map(|_| sampler.sample_spec())
        .find(|s| s.cutoff_hz <= fraction * bandwidth_hz)
        .ok_or_else(|| {
            Error::InvalidParam(format!(
                "no degradation cutoff fits below {:.0} Hz",
                fraction * bandwidth_hz
            ))
        })
}

/// One test clip: degraded input versus restoration, both against clean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub spec: DegradationSpec,
    pub lsd_degraded: f64,
    pub lsd_restored: f64,
    /// Adherence of each clip's DSC to the clean clip's DSC.
    pub adherence_degraded: f64,
    pub adherence_restored: f64,
    pub clipped: usize,
}

/// Degrades every clip, restores it steered by its own clean control with
/// the known cutoff, and scores both against the clean clip.
pub fn benchmark(
    model: &FlowModel,
    clips: &[CorpusClip],
    eval: &EvalConfig,
    req: &RestoreRequest,
) -> Result<Vec<BenchmarkCase>> {
    eval.validate()?;
    let mut sampler = DegradationSampler::new(eval.degradation.clone())?;
    let nyquist = model.analysis.nyquist();
    let specs = clips
        .iter()
        .map(|c| {
            draw_eval_spec(
                &mut sampler,
                c.entry.bandwidth_hz.unwrap_or(nyquist),
                eval.max_cutoff_fraction,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let run = |c: &CorpusClip, spec: DegradationSpec| -> Result<BenchmarkCase> {
        let degraded = apply_degradation(&c.clip, &spec)?.clip;
        let target = extract_control(model, &c.clip)?;
        let req = RestoreRequest {
            cutoff_hz: Some(spec.cutoff_hz),
            ..req.clone()
        };
        let out = restore_clip(model, &degraded, &target, &req)?;
        let adherence_degraded = adherence_tracks(
            &target.track(0),
            &extract_control(model, &degraded)?.track(0),
        )?;
        Ok(BenchmarkCase {
            id: c.entry.id.clone(),
            spec,
            lsd_degraded: lsd(&c.clip, &degraded)?,
            lsd_restored: lsd(&c.clip, &out.clip)?,
            adherence_degraded,
            adherence_restored: out.adherence,
            clipped: out.clipped,
        })
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(clips.len().max(1));
    let chunk = clips.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = clips
            .chunks(chunk)
            .zip(specs.chunks(chunk))
            .map(|(cs, ss)| {
                scope.spawn(move || {
                    cs.iter()
                        .zip(ss)
                        .map(|(c, s)| run(c, *s))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(clips.len());
        for h in handles {
            out.extend(h.join().expect("benchmark worker panicked")?);
        }
        Ok(out)
    })
}
