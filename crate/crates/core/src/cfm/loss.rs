//! Flow-matching regression loss.

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::estimator::{assemble_inputs, Grads, Mlp};
use super::path::{sample_path, PathConfig};
use crate::error::{Error, Result};

/// One (narrowband, fullband, control) example over a run of frames, all in
/// the model's normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x_lr: Array2<f64>,
    pub x_hr: Array2<f64>,
    /// frames × controls, normalized to [0, 1].
    pub control: Array2<f64>,
    /// First mel band of the Gaussian-source region (mixed path only).
    pub boundary: usize,
}

/// Estimator inputs and regression targets after the random draws
/// (time, noise, condition dropout) have been made.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl LossTerms {
    pub fn n_rows(&self) -> usize {
        self.targets.nrows()
    }
}

pub fn draw_terms<R: Rng>(
    model: &Mlp,
    batch: &[TrainItem],
    path: &PathConfig,
    dropout_p: f64,
    rng: &mut R,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for item in batch {
        let t: f64 = rng.gen();
        let (rows, cols) = item.x_hr.dim();
        let noise = Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng));
        let dropped = rng.gen::<f64>() < dropout_p;
        let (x_t, u_t) = sample_path(&item.x_lr, &item.x_hr, t, path, item.boundary, &noise)?;
        inputs.push(assemble_inputs(
            &model.dims,
            &x_t,
            &item.x_lr,
            &vec![t; rows],
            &item.control,
            &vec![dropped; rows],
        )?);
        targets.push(u_t);
    }
    let join = |v: &[Array2<f64>]| {
        concatenate(Axis(0), &v.iter().map(|a| a.view()).collect::<Vec<_>>()).expect("equal widths")
    };
    Ok(LossTerms {
        inputs: join(&inputs),
        targets: join(&targets),
    })
}

/// Mean squared error over every entry.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

pub fn loss(model: &Mlp, terms: &LossTerms) -> f64 {
    mse(&model.forward(&terms.inputs), &terms.targets)
}

pub fn loss_and_grad(model: &Mlp, terms: &LossTerms) -> (f64, Grads) {
    let (pred, cache) = model.forward_cached(&terms.inputs);
    let n = pred.len().max(1) as f64;
    let residual = &pred - &terms.targets;
    let value = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let d_out = residual.mapv(|r| 2.0 * r / n);
    (value, model.backward(&cache, &d_out))
}

/// Draws the random terms and evaluates loss and gradient in one go.
pub fn cfm_loss<R: Rng>(
    model: &Mlp,
    batch: &[TrainItem],
    path: &PathConfig,
    dropout_p: f64,
    rng: &mut R,
) -> Result<(f64, Grads)> {
    let terms = draw_terms(model, batch, path, dropout_p, rng)?;
    Ok(loss_and_grad(model, &terms))
}
