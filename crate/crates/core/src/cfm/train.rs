//! Minibatch training of the estimator with Adam.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimator::{EstimatorDims, Grads, Mlp};
use super::guidance::GuidanceConfig;
use super::loss::{cfm_loss, draw_terms, loss, LossTerms, TrainItem};
use super::path::PathConfig;
use super::{AnalysisConfig, FlowModel, MelNorm};
use crate::audio::AudioClip;
use crate::degrade::{
    apply_degradation, measure_cutoff, DegradationSampler, DegradationSamplerConfig,
    DegradationSpec,
};
use crate::error::{Error, Result};
use crate::metrics::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step as a fraction of `learning_rate`,
    /// reached by cosine decay; 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub hidden: usize,
    pub items_per_step: usize,
    pub frames_per_item: usize,
    /// Degraded versions drawn per clean clip.
    pub variants_per_clip: usize,
    /// Probability that a variant's clean source is first brick-walled at a
    /// random frequency between the degradation cutoff and the clip's
    /// contour, so stopband leakage in the input no longer reveals the band
    /// edge the control asks for.
    pub false_edge_p: f64,
    pub val_items: usize,
    pub eval_every: usize,
    pub path: PathConfig,
    pub guidance: GuidanceConfig,
    pub analysis: AnalysisConfig,
    pub degradation: DegradationSamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 6000,
            learning_rate: 1e-3,
            final_lr_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            hidden: 256,
            items_per_step: 32,
            frames_per_item: 8,
            variants_per_clip: 4,
            false_edge_p: 0.5,
            val_items: 128,
            eval_every: 100,
            path: PathConfig::default(),
            guidance: GuidanceConfig::default(),
            analysis: AnalysisConfig::default(),
            degradation: DegradationSamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.path.validate()?;
        self.guidance.validate()?;
        self.analysis.validate()?;
        self.degradation.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.false_edge_p) {
            return Err(Error::InvalidParam(format!(
                "false_edge_p {} must lie in [0, 1]",
                self.false_edge_p
            )));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::InvalidParam(format!(
                "final_lr_fraction {} must lie in [0, 1]",
                self.final_lr_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return Err(Error::InvalidParam(
                "Adam betas must lie in [0, 1) and eps be positive".into(),
            ));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "grad_clip {} must be >= 0",
                self.grad_clip
            )));
        }
        let counts = [
            ("hidden", self.hidden),
            ("items_per_step", self.items_per_step),
            ("frames_per_item", self.frames_per_item),
            ("variants_per_clip", self.variants_per_clip),
            ("val_items", self.val_items),
            ("eval_every", self.eval_every),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParam(format!("{name} must be positive")));
        }
        Ok(())
    }

    /// Learning rate used at `step` (1-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let progress = if self.steps <= 1 {
            0.0
        } else {
            (step.saturating_sub(1)) as f64 / (self.steps - 1) as f64
        };
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Minibatch loss per step.
    pub train_loss: Vec<f64>,
    /// (step, validation loss); step 0 is the initial parameters.
    pub val_loss: Vec<(usize, f64)>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub n_train_pairs: usize,
    pub n_val_pairs: usize,
}

/// One degraded/clean pair in raw log-mel units.
#[derive(Debug, Clone)]
pub(crate) struct Pair {
    x_lr: Array2<f64>,
    x_hr: Array2<f64>,
    control: Array2<f64>,
    boundary: usize,
}

fn clip_seed(seed: u64, index: usize, salt: u64) -> u64 {
    seed ^ salt ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn prepare_clip(clip: &AudioClip, index: usize, salt: u64, cfg: &TrainConfig) -> Result<Vec<Pair>> {
    let a = &cfg.analysis;
    let bank = a.filterbank()?;
    let (clean_spec, clean_mel) = a.analyze(clip)?;
    let contour = a.control(&clean_spec)?;
    let edge_hz = median(&contour.track(0)).unwrap_or(0.0);
    let control = a.normalize_control(&contour)?;
    let seed = clip_seed(cfg.degradation.seed, index, salt);
    let mut sampler = DegradationSampler::new(DegradationSamplerConfig {
        seed,
        ..cfg.degradation.clone()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xED6E);
    (0..cfg.variants_per_clip)
        .map(|_| {
            let spec = sampler.sample_spec();
            let hide_edge = rng.gen::<f64>() < cfg.false_edge_p;
            let false_edge = rng.gen_range(0.0..1.0);
            let source = if hide_edge && spec.cutoff_hz < edge_hz {
                let hz = spec.cutoff_hz + false_edge * (edge_hz - spec.cutoff_hz);
                apply_degradation(clip, &DegradationSpec::brick_wall(hz))?.clip
            } else {
                clip.clone()
            };
            let degraded = apply_degradation(&source, &spec)?.clip;
            let (_, lr_mel) = a.analyze(&degraded)?;
            let boundary = bank.bands_below(measure_cutoff(&degraded, clip)?);
            Ok(Pair {
                x_lr: lr_mel.values,
                x_hr: clean_mel.values.clone(),
                control: control.clone(),
                boundary,
            })
        })
        .collect()
}

/// Builds the degraded/clean pool, one worker thread per chunk of clips.
/// Output order and content depend only on the inputs and seed.
pub(crate) fn prepare_pairs(
    clips: &[AudioClip],
    salt: u64,
    cfg: &TrainConfig,
) -> Result<Vec<Pair>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(clips.len().max(1));
    let chunk = clips.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<Pair>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = clips
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for (j, clip) in part.iter().enumerate() {
                        out.extend(prepare_clip(clip, c * chunk + j, salt, cfg)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut pairs = Vec::new();
    for r in results {
        pairs.extend(r?);
    }
    Ok(pairs)
}

fn crop<R: Rng>(pair: &Pair, frames: usize, norm: &MelNorm, rng: &mut R) -> TrainItem {
    let n = pair.x_hr.nrows();
    let len = frames.min(n);
    let start = rng.gen_range(0..=n - len);
    let rows = s![start..start + len, ..];
    TrainItem {
        x_lr: norm.forward(&pair.x_lr.slice(rows).to_owned()),
        x_hr: norm.forward(&pair.x_hr.slice(rows).to_owned()),
        control: pair.control.slice(rows).to_owned(),
        boundary: pair.boundary,
    }
}

fn batch<R: Rng>(
    pairs: &[Pair],
    count: usize,
    frames: usize,
    norm: &MelNorm,
    rng: &mut R,
) -> Vec<TrainItem> {
    (0..count)
        .map(|_| crop(&pairs[rng.gen_range(0..pairs.len())], frames, norm, rng))
        .collect()
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &Mlp) -> Self {
        let zeros: Vec<_> = model
            .tensors()
            .iter()
            .map(|t| Array2::zeros(t.dim()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Mlp, grads: &Grads, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, p) in model.tensors_mut().into_iter().enumerate() {
            ndarray::Zip::from(p)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(&grads.0[k])
                .for_each(|p, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
                });
        }
    }
}

/// Trains a model on clean clips, pairing each with randomly degraded
/// versions. Returns the parameters with the lowest validation loss.
pub fn train(
    train_clips: &[AudioClip],
    val_clips: &[AudioClip],
    cfg: &TrainConfig,
) -> Result<(FlowModel, TrainReport)> {
    cfg.validate()?;
    if train_clips.is_empty() || val_clips.is_empty() {
        return Err(Error::InvalidParam(
            "training needs nonempty train and validation sets".into(),
        ));
    }
    let train_pairs = prepare_pairs(train_clips, 0, cfg)?;
    let val_pairs = prepare_pairs(val_clips, 0x5EED_0F_7A11, cfg)?;
    let norm = MelNorm::fit(
        train_pairs
            .iter()
            .step_by(cfg.variants_per_clip)
            .flat_map(|p| p.x_hr.iter()),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = EstimatorDims {
        n_mels: cfg.analysis.mel.n_mels,
        n_controls: 1,
        hidden: cfg.hidden,
    };
    let mut model = Mlp::new(dims, &mut rng)?;

    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_A5A5);
    let val_batch = batch(
        &val_pairs,
        cfg.val_items,
        cfg.frames_per_item,
        &norm,
        &mut val_rng,
    );
    let val_terms: LossTerms = draw_terms(
        &model,
        &val_batch,
        &cfg.path,
        cfg.guidance.cond_dropout_p,
        &mut val_rng,
    )?;

    let initial = loss(&model, &val_terms);
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.steps),
        val_loss: vec![(0, initial)],
        initial_val_loss: initial,
        best_val_loss: initial,
        best_step: 0,
        n_train_pairs: train_pairs.len(),
        n_val_pairs: val_pairs.len(),
    };
    let mut best = model.clone();
    let mut adam = Adam::new(&model);
    for step in 1..=cfg.steps {
        let items = batch(
            &train_pairs,
            cfg.items_per_step,
            cfg.frames_per_item,
            &norm,
            &mut rng,
        );
        let (value, mut grads) = cfm_loss(
            &model,
            &items,
            &cfg.path,
            cfg.guidance.cond_dropout_p,
            &mut rng,
        )?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let gn = grads.norm();
        if cfg.grad_clip > 0.0 && gn > cfg.grad_clip {
            grads.scale(cfg.grad_clip / gn);
        }
        adam.step(&mut model, &grads, cfg.lr_at(step), cfg);
        report.train_loss.push(value);
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let v = loss(&model, &val_terms);
            if !v.is_finite() {
                return Err(Error::Diverged { step, loss: v });
            }
            report.val_loss.push((step, v));
            if v < report.best_val_loss {
                report.best_val_loss = v;
                report.best_step = step;
                best = model.clone();
            }
        }
    }
    let model = FlowModel {
        estimator: best,
        path: cfg.path,
        guidance: cfg.guidance,
        norm,
        analysis: cfg.analysis,
    };
    model.validate()?;
    Ok((model, report))
}
