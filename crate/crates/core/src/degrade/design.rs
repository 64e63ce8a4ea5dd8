//! Lowpass filter design: windowed-sinc FIR and IIR second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

/// One second-order section, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Complex response at normalised angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (1.0 + z1 * self.a[0] + z2 * self.a[1])
    }

    /// Largest pole magnitude.
    pub fn max_pole_magnitude(&self) -> f64 {
        let [a1, a2] = self.a;
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.abs().sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }

    /// RBJ cookbook lowpass.
    pub fn lowpass(cutoff_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0 / a0;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// First-order bilinear lowpass packed as a degenerate section.
    pub fn first_order_lowpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = (PI * cutoff_hz / sample_rate).tan();
        let g = k / (1.0 + k);
        Self {
            b: [g, g, 0.0],
            a: [(k - 1.0) / (k + 1.0), 0.0],
        }
    }
}

/// Cascade of sections.
pub type Sos = Vec<Biquad>;

pub fn sos_response(sos: &[Biquad], freq_hz: f64, sample_rate: f64) -> Complex64 {
    let omega = 2.0 * PI * freq_hz / sample_rate;
    sos.iter().map(|s| s.response(omega)).product()
}

/// Butterworth response realised as RBJ biquads with per-pair Q values.
pub fn butterworth_biquads(order: usize, cutoff_hz: f64, sample_rate: f64) -> Sos {
    let mut sos: Sos = (0..order / 2)
        .map(|k| {
            let q = 1.0 / (2.0 * (PI * (2 * k + 1) as f64 / (2 * order) as f64).sin());
            Biquad::lowpass(cutoff_hz, q, sample_rate)
        })
        .collect();
    if order % 2 == 1 {
        sos.push(Biquad::first_order_lowpass(cutoff_hz, sample_rate));
    }
    sos
}

/// Chebyshev type I: analog prototype poles, prewarped bilinear transform,
/// unit DC gain.
pub fn chebyshev1(order: usize, ripple_db: f64, cutoff_hz: f64, sample_rate: f64) -> Sos {
    let c = 2.0 * sample_rate;
    let warped = c * (PI * cutoff_hz / sample_rate).tan();
    let eps = (10f64.powf(ripple_db / 10.0) - 1.0).sqrt();
    let v0 = (1.0 / eps).asinh() / order as f64;
    let pole = |k: usize| {
        let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
        Complex64::new(-v0.sinh() * theta.sin(), v0.cosh() * theta.cos()) * warped
    };
    let mut sos = Sos::new();
    for k in 0..order / 2 {
        // H(s) = a0 / (s^2 + a1 s + a0) for the conjugate pair.
        let p = pole(k);
        let a1 = -2.0 * p.re;
        let a0 = p.norm_sqr();
        let d0 = c * c + a1 * c + a0;
        let g = a0 / d0;
        sos.push(Biquad {
            b: [g, 2.0 * g, g],
            a: [(2.0 * a0 - 2.0 * c * c) / d0, (c * c - a1 * c + a0) / d0],
        });
    }
    if order % 2 == 1 {
        let a0 = -pole(order / 2).re;
        let g = a0 / (c + a0);
        sos.push(Biquad {
            b: [g, g, 0.0],
            a: [(a0 - c) / (c + a0), 0.0],
        });
    }
    sos
}

/// Hamming-windowed sinc lowpass with `taps` coefficients, unit DC gain.
pub fn windowed_sinc(taps: usize, cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let fc = cutoff_hz / sample_rate;
    let mid = (taps - 1) as f64 / 2.0;
    let h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let window = if taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos()
            };
            sinc * window
        })
        .collect();
    let total: f64 = h.iter().sum();
    h.into_iter().map(|v| v / total).collect()
}

pub fn fir_response(h: &[f64], freq_hz: f64, sample_rate: f64) -> Complex64 {
    let omega = 2.0 * PI * freq_hz / sample_rate;
    h.iter()
        .enumerate()
        .map(|(n, &c)| Complex64::from_polar(c, -omega * n as f64))
        .sum()
}

/// Runs a cascade in transposed direct form II. Each section starts in the
/// steady state for a constant input equal to the first sample.
pub fn sos_filter(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sos {
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        let Some(&first) = y.first() else { return y };
        let steady = s.dc_gain() * first;
        let mut z2 = b2 * first - a2 * steady;
        let mut z1 = b1 * first - a1 * steady + z2;
        for v in y.iter_mut() {
            let input = *v;
            let out = b0 * input + z1;
            z1 = b1 * input - a1 * out + z2;
            z2 = b2 * input - a2 * out;
            *v = out;
        }
    }
    y
}
