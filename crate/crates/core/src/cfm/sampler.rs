//! Guided Euler integration of the learned vector field.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::estimator::VectorField;
use super::guidance::{cfg_zero_star, GuidanceConfig};
use super::path::PathConfig;
use super::FlowModel;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::features::ControlSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 1 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParam(
                "sampler needs at least one step".into(),
            ));
        }
        Ok(())
    }
}

/// Integrates from the path source at t = 0 to t = 1 in model units.
/// `control` is frames × controls, normalized.
#[allow(clippy::too_many_arguments)]
pub fn sample<V: VectorField + ?Sized, R: Rng>(
    field: &V,
    x_lr: &Array2<f64>,
    control: &Array2<f64>,
    path: &PathConfig,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    boundary: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    sampler.validate()?;
    guidance.validate()?;
    if control.nrows() != x_lr.nrows() {
        return Err(Error::Shape(format!(
            "control has {} frames, mel has {}",
            control.nrows(),
            x_lr.nrows()
        )));
    }
    if x_lr.ncols() != field.n_mels() {
        return Err(Error::Shape(format!(
            "mel has {} bands, estimator expects {}",
            x_lr.ncols(),
            field.n_mels()
        )));
    }
    let noise = Array2::from_shape_simple_fn(x_lr.dim(), || StandardNormal.sample(rng));
    let mut x = path.source(x_lr, boundary, &noise)?;
    let dt = 1.0 / sampler.steps as f64;
    for k in guidance.zero_init_steps.min(sampler.steps)..sampler.steps {
        let t = k as f64 * dt;
        let v_cond = field.velocity(&x, t, x_lr, Some(control))?;
        let v = if guidance.needs_unconditional() {
            let v_uncond = field.velocity(&x, t, x_lr, None)?;
            cfg_zero_star(&v_cond, &v_uncond, guidance.w, guidance.s_mode)?
        } else {
            v_cond
        };
        x.scaled_add(dt, &v);
    }
    Ok(x)
}

impl FlowModel {
    /// Restores a narrowband log-mel under `control`. `boundary` is the
    /// first mel band treated as missing by the mixed path.
    pub fn restore_mel(
        &self,
        x_lr: &MelSpectrogram,
        control: &ControlSignal,
        guidance: &GuidanceConfig,
        sampler: &SamplerConfig,
        boundary: usize,
        seed: u64,
    ) -> Result<MelSpectrogram> {
        if control.n_frames() != x_lr.n_frames() {
            return Err(Error::Shape(format!(
                "control has {} frames, mel has {}",
                control.n_frames(),
                x_lr.n_frames()
            )));
        }
        let c = self.analysis.normalize_control(control)?;
        let lr = self.norm.forward(&x_lr.values);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = sample(
            &self.estimator,
            &lr,
            &c,
            &self.path,
            guidance,
            sampler,
            boundary,
            &mut rng,
        )?;
        Ok(MelSpectrogram {
            values: self.norm.inverse(&out),
            ..x_lr.clone()
        })
    }
}
