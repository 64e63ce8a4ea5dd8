//! Conditional probability paths from the narrowband mel to the fullband mel.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// Linear interpolation from the narrowband mel on every band, with a
    /// noise level decaying to zero at t = 1.
    Adaptive,
    /// Adaptive below the per-item boundary band; Gaussian source above.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub kind: PathKind,
    pub sigma_min: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            kind: PathKind::Adaptive,
            sigma_min: 1e-4,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.sigma_min) {
            return Err(Error::InvalidParam(format!(
                "sigma_min {} must lie in [0, 0.5]",
                self.sigma_min
            )));
        }
        Ok(())
    }

    /// Bands at or above this index use the Gaussian-source rule.
    pub fn effective_boundary(&self, boundary: usize, n_mels: usize) -> usize {
        match self.kind {
            PathKind::Adaptive => n_mels,
            PathKind::Mixed => boundary.min(n_mels),
        }
    }

    /// Noise level of the adaptive rule at time `t`.
    pub fn adaptive_sigma(&self, t: f64) -> f64 {
        self.sigma_min * (1.0 - t)
    }

    /// State at t = 0 for the sampler.
    pub fn source(
        &self,
        x_lr: &Array2<f64>,
        boundary: usize,
        noise: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        Ok(sample_path(x_lr, x_lr, 0.0, self, boundary, noise)?.0)
    }
}

/// Returns `(x_t, u_t)` for one item. `boundary` is the first band of the
/// Gaussian-source region and is ignored by the adaptive path.
pub fn sample_path(
    x_lr: &Array2<f64>,
    x_hr: &Array2<f64>,
    t: f64,
    path: &PathConfig,
    boundary: usize,
    noise: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if x_lr.dim() != x_hr.dim() || x_lr.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "x_lr {:?}, x_hr {:?} and noise {:?} must agree",
            x_lr.dim(),
            x_hr.dim(),
            noise.dim()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParam(format!("t = {t} outside [0, 1]")));
    }
    path.validate()?;
    let b = path.effective_boundary(boundary, x_lr.ncols());
    let sigma = path.sigma_min;
    let sigma_t = path.adaptive_sigma(t);
    let source_scale = 1.0 - (1.0 - sigma) * t;
    let mut x_t = Array2::zeros(x_lr.dim());
    let mut u_t = Array2::zeros(x_lr.dim());
    Zip::indexed(&mut x_t)
        .and(&mut u_t)
        .and(x_lr)
        .and(x_hr)
        .and(noise)
        .for_each(|(_, m), xt, ut, &lo, &hi, &z| {
            if m < b {
                *xt = (1.0 - t) * lo + t * hi + sigma_t * z;
                *ut = hi - lo - sigma * z;
            } else {
                *xt = source_scale * z + t * hi;
                *ut = hi - (1.0 - sigma) * z;
            }
        });
    Ok((x_t, u_t))
}
