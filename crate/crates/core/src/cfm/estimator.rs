//! Per-frame MLP vector-field estimator with exact backpropagation.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the sinusoidal time embedding (sin/cos pairs).
pub const TIME_EMBED_DIM: usize = 16;

pub const TENSOR_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorDims {
    pub n_mels: usize,
    pub n_controls: usize,
    pub hidden: usize,
}

impl EstimatorDims {
    /// x_t, x_lr, time embedding, embedded controls, null flag.
    pub fn input_dim(&self) -> usize {
        2 * self.n_mels + TIME_EMBED_DIM + self.n_controls * CONTROL_EMBED_DIM + 1
    }

    pub fn shapes(&self) -> [(usize, usize); 6] {
        let (d, h, m) = (self.input_dim(), self.hidden, self.n_mels);
        [(d, h), (1, h), (h, h), (1, h), (h, m), (1, m)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.hidden == 0 {
            return Err(Error::InvalidParam(format!(
                "degenerate estimator dims {self:?}"
            )));
        }
        Ok(())
    }
}

/// Velocity prediction for a grid of frames sharing one time value.
pub trait VectorField {
    fn n_mels(&self) -> usize;

    /// `control` is frames × controls, already normalized to [0, 1];
    /// `None` is the null condition.
    fn velocity(
        &self,
        x_t: &Array2<f64>,
        t: f64,
        x_lr: &Array2<f64>,
        control: Option<&Array2<f64>>,
    ) -> Result<Array2<f64>>;
}

pub fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_K * (z + GELU_C * z * z * z)).tanh())
}

pub fn gelu_grad(z: f64) -> f64 {
    let th = (GELU_K * (z + GELU_C * z * z * z)).tanh();
    0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * z * z)
}

pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let mut e = [0.0; TIME_EMBED_DIM];
    for i in 0..TIME_EMBED_DIM / 2 {
        let omega = (1u32 << i) as f64;
        e[2 * i] = (omega * t).sin();
        e[2 * i + 1] = (omega * t).cos();
    }
    e
}

/// Octaves of the sinusoidal control embedding.
pub const CONTROL_EMBED_FREQS: usize = 6;
/// Inputs per control value: the value itself plus a sine and cosine per octave.
pub const CONTROL_EMBED_DIM: usize = 1 + 2 * CONTROL_EMBED_FREQS;

/// `[c, sin(π 2^i c), cos(π 2^i c)]` for `i < CONTROL_EMBED_FREQS`. Lets the
/// first layer place sharp band edges anywhere in the normalized range.
pub fn control_embedding(c: f64) -> [f64; CONTROL_EMBED_DIM] {
    let mut e = [0.0; CONTROL_EMBED_DIM];
    e[0] = c;
    for i in 0..CONTROL_EMBED_FREQS {
        let a = std::f64::consts::PI * (1u32 << i) as f64 * c;
        e[1 + 2 * i] = a.sin();
        e[2 + 2 * i] = a.cos();
    }
    e
}

/// Builds the estimator input rows. `t` holds one value per row; rows whose
/// `null` flag is set get zeroed controls.
pub fn assemble_inputs(
    dims: &EstimatorDims,
    x_t: &Array2<f64>,
    x_lr: &Array2<f64>,
    t: &[f64],
    control: &Array2<f64>,
    null: &[bool],
) -> Result<Array2<f64>> {
    let n = x_t.nrows();
    let m = dims.n_mels;
    if x_t.dim() != (n, m)
        || x_lr.dim() != (n, m)
        || t.len() != n
        || null.len() != n
        || control.dim() != (n, dims.n_controls)
    {
        return Err(Error::Shape(format!(
            "estimator inputs: x_t {:?}, x_lr {:?}, t {}, control {:?}, null {} for {} mels / {} controls",
            x_t.dim(),
            x_lr.dim(),
            t.len(),
            control.dim(),
            null.len(),
            m,
            dims.n_controls
        )));
    }
    let mut x = Array2::zeros((n, dims.input_dim()));
    x.slice_mut(s![.., 0..m]).assign(x_t);
    x.slice_mut(s![.., m..2 * m]).assign(x_lr);
    let c0 = 2 * m + TIME_EMBED_DIM;
    for r in 0..n {
        let mut row = x.row_mut(r);
        for (i, v) in time_embedding(t[r]).into_iter().enumerate() {
            row[2 * m + i] = v;
        }
        if null[r] {
            row[c0 + dims.n_controls * CONTROL_EMBED_DIM] = 1.0;
        } else {
            for j in 0..dims.n_controls {
                for (i, v) in control_embedding(control[[r, j]]).into_iter().enumerate() {
                    row[c0 + j * CONTROL_EMBED_DIM + i] = v;
                }
            }
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: EstimatorDims,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub w3: Array2<f64>,
    pub b3: Array2<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
}

/// Gradients in [`TENSOR_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Array2<f64>>);

impl Grads {
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng>(dims: EstimatorDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut init = |(fan_in, fan_out): (usize, usize)| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..limit))
        };
        let [s1, s2, s3, s4, s5, s6] = dims.shapes();
        let w1 = init(s1);
        let w2 = init(s3);
        let w3 = init(s5);
        Ok(Self {
            dims,
            w1,
            b1: Array2::zeros(s2),
            w2,
            b2: Array2::zeros(s4),
            w3,
            b3: Array2::zeros(s6),
        })
    }

    pub fn from_tensors(dims: EstimatorDims, tensors: Vec<Array2<f64>>) -> Result<Self> {
        dims.validate()?;
        if tensors.len() != 6 {
            return Err(Error::Shape(format!(
                "expected 6 tensors, got {}",
                tensors.len()
            )));
        }
        for ((t, shape), name) in tensors.iter().zip(dims.shapes()).zip(TENSOR_NAMES) {
            if t.dim() != shape {
                return Err(Error::Shape(format!(
                    "tensor {name} is {:?}, expected {shape:?}",
                    t.dim()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            dims,
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            w3: next(),
            b3: next(),
        })
    }

    pub fn tensors(&self) -> [&Array2<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let a1 = (x.dot(&self.w1) + &self.b1).mapv_into(gelu);
        let a2 = (a1.dot(&self.w2) + &self.b2).mapv_into(gelu);
        a2.dot(&self.w3) + &self.b3
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, Cache) {
        let z1 = x.dot(&self.w1) + &self.b1;
        let a1 = z1.mapv(gelu);
        let z2 = a1.dot(&self.w2) + &self.b2;
        let a2 = z2.mapv(gelu);
        let out = a2.dot(&self.w3) + &self.b3;
        (
            out,
            Cache {
                x: x.clone(),
                z1,
                a1,
                z2,
                a2,
            },
        )
    }

    /// Gradients of a scalar loss given its derivative w.r.t. the output.
    pub fn backward(&self, cache: &Cache, d_out: &Array2<f64>) -> Grads {
        let gw3 = cache.a2.t().dot(d_out);
        let gb3 = d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut d2 = d_out.dot(&self.w3.t());
        ndarray::Zip::from(&mut d2)
            .and(&cache.z2)
            .for_each(|d, &z| *d *= gelu_grad(z));
        let gw2 = cache.a1.t().dot(&d2);
        let gb2 = d2.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut d1 = d2.dot(&self.w2.t());
        ndarray::Zip::from(&mut d1)
            .and(&cache.z1)
            .for_each(|d, &z| *d *= gelu_grad(z));
        let gw1 = cache.x.t().dot(&d1);
        let gb1 = d1.sum_axis(Axis(0)).insert_axis(Axis(0));
        Grads(vec![gw1, gb1, gw2, gb2, gw3, gb3])
    }
}

impl VectorField for Mlp {
    fn n_mels(&self) -> usize {
        self.dims.n_mels
    }

    fn velocity(
        &self,
        x_t: &Array2<f64>,
        t: f64,
        x_lr: &Array2<f64>,
        control: Option<&Array2<f64>>,
    ) -> Result<Array2<f64>> {
        let n = x_t.nrows();
        let (ctrl, null) = match control {
            Some(c) => (c.clone(), vec![false; n]),
            None => (Array2::zeros((n, self.dims.n_controls)), vec![true; n]),
        };
        let x = assemble_inputs(&self.dims, x_t, x_lr, &vec![t; n], &ctrl, &null)?;
        Ok(self.forward(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Mlp {
        let dims = EstimatorDims {
            n_mels: 6,
            n_controls: 1,
            hidden: 8,
        };
        Mlp::new(dims, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn gelu_matches_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_477).abs() < 1e-12);
        for z in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(z + 1e-6) - gelu(z - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn null_rows_zero_the_controls() {
        let net = small();
        let x = Array2::ones((2, 6));
        let c = Array2::from_elem((2, 1), 0.5);
        let inp = assemble_inputs(&net.dims, &x, &x, &[0.0, 1.0], &c, &[false, true]).unwrap();
        let c0 = 12 + TIME_EMBED_DIM;
        let flag = c0 + CONTROL_EMBED_DIM;
        assert_eq!(inp.ncols(), flag + 1);
        assert_eq!(inp[[0, c0]], 0.5);
        // sin(π/2), cos(π/2), then sin(π), cos(π).
        assert_eq!(inp[[0, c0 + 1]], 1.0);
        assert!(inp[[0, c0 + 2]].abs() < 1e-15 && inp[[0, c0 + 3]].abs() < 1e-15);
        assert_eq!(inp[[0, c0 + 4]], -1.0);
        assert_eq!(inp[[0, flag]], 0.0);
        assert!(inp.row(1).slice(s![c0..flag]).iter().all(|&v| v == 0.0));
        assert_eq!(inp[[1, flag]], 1.0);
        assert_eq!(inp[[0, 12 + 1]], 1.0); // cos(0)
    }

    #[test]
    fn control_embedding_octaves() {
        for c in [0.0, 0.13, 0.5, 1.0] {
            let e = control_embedding(c);
            assert_eq!(e[0], c);
            for i in 0..CONTROL_EMBED_FREQS {
                let a = std::f64::consts::PI * 2f64.powi(i as i32) * c;
                assert_eq!((e[1 + 2 * i], e[2 + 2 * i]), (a.sin(), a.cos()));
            }
        }
    }

    #[test]
    fn shapes_are_checked() {
        let net = small();
        let x = Array2::ones((2, 5));
        assert!(net.velocity(&x, 0.0, &x, None).is_err());
        let bad = vec![Array2::zeros((1, 1)); 6];
        assert!(Mlp::from_tensors(net.dims, bad).is_err());
    }

    #[test]
    fn forward_cached_agrees_with_forward() {
        let net = small();
        let x = Array2::from_shape_fn((3, net.dims.input_dim()), |(i, j)| {
            ((i * 7 + j) as f64 * 0.37).sin()
        });
        assert_eq!(net.forward(&x), net.forward_cached(&x).0);
    }

    #[test]
    fn xavier_limits_respected() {
        let net = small();
        let limit = (6.0 / (net.dims.input_dim() + 8) as f64).sqrt();
        assert!(net.w1.iter().all(|v| v.abs() < limit));
        assert!(net.b1.iter().all(|v| *v == 0.0));
        assert_eq!(
            net.param_count(),
            net.dims.shapes().iter().map(|(a, b)| a * b).sum::<usize>()
        );
    }
}
