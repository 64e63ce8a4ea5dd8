//! Classifier-free guidance with the optimized unconditional scale.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this squared norm the unconditional field is treated as zero and
/// the projection coefficient falls back to 1.
pub const PROJECTION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// s = 1, vanilla classifier-free guidance.
    Fixed,
    /// s = ⟨v_c, v_u⟩ / ‖v_u‖².
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub w: f64,
    pub s_mode: ScaleMode,
    pub zero_init_steps: usize,
    pub cond_dropout_p: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            w: 1.0,
            s_mode: ScaleMode::Projected,
            zero_init_steps: 0,
            cond_dropout_p: 0.1,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "guidance weight {} must be finite and >= 0",
                self.w
            )));
        }
        if !(0.0..1.0).contains(&self.cond_dropout_p) {
            return Err(Error::InvalidParam(format!(
                "cond_dropout_p {} outside [0, 1)",
                self.cond_dropout_p
            )));
        }
        Ok(())
    }

    /// Whether sampling needs the unconditional branch at all.
    pub fn needs_unconditional(&self) -> bool {
        self.w != 1.0
    }
}

/// Projection coefficient of `v_cond` onto `v_uncond` over all entries.
pub fn projection_scale(v_cond: &Array2<f64>, v_uncond: &Array2<f64>) -> f64 {
    let dot: f64 = Zip::from(v_cond)
        .and(v_uncond)
        .fold(0.0, |acc, &c, &u| acc + c * u);
    let norm2: f64 = v_uncond.iter().map(|u| u * u).sum();
    if norm2 < PROJECTION_GUARD {
        1.0
    } else {
        dot / norm2
    }
}

/// Guided field `(1 − w)·s·v_uncond + w·v_cond`. At w = 1 the conditional
/// field is returned unchanged.
pub fn cfg_zero_star(
    v_cond: &Array2<f64>,
    v_uncond: &Array2<f64>,
    w: f64,
    mode: ScaleMode,
) -> Result<Array2<f64>> {
    if v_cond.dim() != v_uncond.dim() {
        return Err(Error::Shape(format!(
            "v_cond {:?} vs v_uncond {:?}",
            v_cond.dim(),
            v_uncond.dim()
        )));
    }
    if w == 1.0 {
        return Ok(v_cond.clone());
    }
    let s = match mode {
        ScaleMode::Fixed => 1.0,
        ScaleMode::Projected => projection_scale(v_cond, v_uncond),
    };
    let a = (1.0 - w) * s;
    Ok(Zip::from(v_cond)
        .and(v_uncond)
        .map_collect(|&c, &u| a * u + w * c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn identical_fields_pass_through() {
        let v = array![[1.0, -2.0], [0.5, 3.0]];
        for w in [0.0, 0.5, 1.0, 2.0, 7.5] {
            let out = cfg_zero_star(&v, &v, w, ScaleMode::Projected).unwrap();
            assert!((projection_scale(&v, &v) - 1.0).abs() < 1e-15);
            for (a, b) in out.iter().zip(v.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_fields_drop_the_unconditional_term() {
        let c = array![[1.0, 0.0]];
        let u = array![[0.0, 2.0]];
        assert_eq!(projection_scale(&c, &u), 0.0);
        assert_eq!(
            cfg_zero_star(&c, &u, 3.0, ScaleMode::Projected).unwrap(),
            array![[3.0, 0.0]]
        );
    }

    #[test]
    fn parallel_fields_hand_computed() {
        let u = array![[1.0, 2.0, -1.0]];
        let c = u.mapv(|x| 3.0 * x);
        assert!((projection_scale(&c, &u) - 3.0).abs() < 1e-15);
        let out = cfg_zero_star(&c, &u, 2.0, ScaleMode::Projected).unwrap();
        for (a, b) in out.iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_mode_is_vanilla_guidance() {
        let c = array![[1.0, 4.0]];
        let u = array![[2.0, -1.0]];
        assert_eq!(
            cfg_zero_star(&c, &u, 3.0, ScaleMode::Fixed).unwrap(),
            array![[-1.0, 14.0]]
        );
    }

    #[test]
    fn zero_unconditional_field_is_guarded() {
        let c = array![[1.0, 1.0]];
        let u = array![[0.0, 0.0]];
        assert_eq!(projection_scale(&c, &u), 1.0);
        assert!(cfg_zero_star(&c, &u, 0.0, ScaleMode::Projected)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(cfg_zero_star(
            &array![[1.0]],
            &array![[1.0, 2.0]],
            2.0,
            ScaleMode::Projected
        )
        .is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GuidanceConfig::default().validate().is_ok());
        assert!(GuidanceConfig {
            w: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GuidanceConfig {
            cond_dropout_p: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(!GuidanceConfig::default().needs_unconditional());
    }

    fn field() -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 12)
            .prop_map(|v| Array2::from_shape_vec((3, 4), v).unwrap())
    }

    proptest! {
        #[test]
        fn residual_is_orthogonal(c in field(), u in field()) {
            let norm2: f64 = u.iter().map(|x| x * x).sum();
            prop_assume!(norm2 > 1e-6);
            let s = projection_scale(&c, &u);
            let r: f64 = c.iter().zip(u.iter()).map(|(a, b)| (a - s * b) * b).sum();
            let scale = c.iter().map(|x| x * x).sum::<f64>().sqrt() * norm2.sqrt();
            prop_assert!(r.abs() <= 1e-9 * scale.max(1e-300));
        }

        #[test]
        fn w_one_is_bit_identical(c in field(), u in field()) {
            prop_assert_eq!(cfg_zero_star(&c, &u, 1.0, ScaleMode::Projected).unwrap(), c);
        }

        #[test]
        fn invariant_to_positive_rescaling(c in field(), u in field(), alpha in 0.01f64..100.0, w in 0.0f64..5.0) {
            prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let su = u.mapv(|x| alpha * x);
            let s1 = projection_scale(&c, &u);
            let s2 = projection_scale(&c, &su);
            prop_assert!((s2 - s1 / alpha).abs() <= 1e-9 * (s1 / alpha).abs().max(1e-9));
            let a = cfg_zero_star(&c, &u, w, ScaleMode::Projected).unwrap();
            let b = cfg_zero_star(&c, &su, w, ScaleMode::Projected).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }
}
