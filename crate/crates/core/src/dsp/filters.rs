//! One-dimensional smoothing filters with half-sample symmetric boundaries
//! (`d c b a | a b c d | d c b a`).

use crate::error::{Error, Result};

/// Maps an out-of-range index into `0..n` by half-sample symmetric
/// reflection. The extension has period `2n`, so any offset is valid.
pub fn symmetric_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalised Gaussian kernel of radius `ceil(4 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParam(format!(
            "gaussian sigma {sigma} must be finite and >= 0"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

pub fn gaussian_filter_1d(x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let kernel = gaussian_kernel(sigma)?;
    if kernel.len() == 1 || x.is_empty() {
        return Ok(x.to_vec());
    }
    let radius = (kernel.len() / 2) as isize;
    let n = x.len();
    Ok((0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * x[symmetric_index(i + j as isize - radius, n)])
                .sum()
        })
        .collect())
}

pub fn median_filter_1d(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidParam(format!(
            "median window {window} must be odd and >= 1"
        )));
    }
    if window == 1 || x.is_empty() {
        return Ok(x.to_vec());
    }
    let half = (window / 2) as isize;
    let n = x.len();
    let mut buf = Vec::with_capacity(window);
    Ok((0..n as isize)
        .map(|i| {
            buf.clear();
            buf.extend((-half..=half).map(|d| x[symmetric_index(i + d, n)]));
            buf.sort_by(f64::total_cmp);
            buf[window / 2]
        })
        .collect())
}
