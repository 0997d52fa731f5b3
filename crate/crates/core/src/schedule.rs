//! Closed forms of the variance-preserving base SDE.
//!
//! Time runs from data (`t = 0`) to prior (`t = 1`), with the noise rate
//! decreasing linearly: `beta(t) = (1 - t) beta_max + t beta_min`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const DEFAULT_BETA_MIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub beta_max: f64,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    pub dim: usize,
}

fn default_beta_min() -> f64 {
    DEFAULT_BETA_MIN
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(domain(format!("time {t} outside [0, 1]")))
    }
}

impl ScheduleParams {
    pub fn new(beta_max: f64, beta_min: f64, dim: usize) -> Result<Self> {
        let p = Self {
            beta_max,
            beta_min,
            dim,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_max >= self.beta_min && self.beta_max.is_finite()) {
            return Err(domain(format!(
                "need beta_max >= beta_min > 0, got beta_max={} beta_min={}",
                self.beta_max, self.beta_min
            )));
        }
        if self.dim == 0 {
            return Err(domain("dim must be at least 1"));
        }
        Ok(())
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok((1.0 - t) * self.beta_max + t * self.beta_min)
    }

    /// Base drift `-beta(t) x / 2`.
    pub fn drift(&self, t: f64, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let half_beta = 0.5 * self.beta(t)?;
        Ok(x.mapv(|v| -half_beta * v))
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.beta(t)?.sqrt())
    }

    /// `B(s, t) = ∫_s^t beta`.
    pub fn accumulated_rate(&self, s: f64, t: f64) -> Result<f64> {
        check_time(s)?;
        check_time(t)?;
        if s > t {
            return Err(domain(format!("accumulated_rate needs s <= t, got s={s} t={t}")));
        }
        Ok(self.beta_max * (t - s) + (self.beta_min - self.beta_max) * (t * t - s * s) / 2.0)
    }

    /// `exp(-B(t, 1) / 2)`.
    pub fn kappa(&self, t: f64) -> Result<f64> {
        Ok((-0.5 * self.accumulated_rate(t, 1.0)?).exp())
    }

    /// `exp(-B(0, t) / 2)`.
    pub fn kappa_bar(&self, t: f64) -> Result<f64> {
        Ok((-0.5 * self.accumulated_rate(0.0, t)?).exp())
    }

    /// Mean coefficient and isotropic variance of `X_t | X_s`.
    pub fn transition_coeffs(&self, s: f64, t: f64) -> Result<(f64, f64)> {
        let b = self.accumulated_rate(s, t)?;
        Ok(((-0.5 * b).exp(), -(-b).exp_m1()))
    }

    /// Gaussian transition `X_t | X_s = x_s`: returns `(mean, variance)`.
    pub fn transition_moments(
        &self,
        s: f64,
        t: f64,
        x_s: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, f64)> {
        let (c, v) = self.transition_coeffs(s, t)?;
        Ok((x_s.mapv(|x| c * x), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::numeric::quadrature;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn desk() -> ScheduleParams {
        ScheduleParams::new(4.0, 0.1, 2).unwrap()
    }

    #[test]
    fn beta_endpoints_and_midpoint() {
        assert_eq!(desk().beta(0.0).unwrap(), 4.0);
        assert_eq!(desk().beta(1.0).unwrap(), 0.1);
        let p = ScheduleParams::new(20.0, 0.1, 1).unwrap();
        assert_relative_eq!(p.beta(0.5).unwrap(), 10.05, epsilon = 1e-14);
        assert!(desk().beta(1.5).is_err());
        assert!(desk().beta(-0.1).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ScheduleParams::new(0.05, 0.1, 1).is_err());
        assert!(ScheduleParams::new(4.0, 0.0, 1).is_err());
        assert!(ScheduleParams::new(4.0, 0.1, 0).is_err());
    }

    #[test]
    fn drift_examples() {
        let p = desk();
        assert_eq!(p.drift(0.0, array![2.0, 0.0].view()).unwrap(), array![-4.0, 0.0]);
        assert_eq!(p.drift(0.3, array![0.0, 0.0].view()).unwrap(), array![0.0, 0.0]);
        assert_relative_eq!(p.drift(1.0, array![1.0].view()).unwrap()[0], -0.05, epsilon = 1e-15);
    }

    #[test]
    fn sigma_examples() {
        let p = desk();
        assert_eq!(p.sigma(0.0).unwrap(), 2.0);
        assert_relative_eq!(p.sigma(1.0).unwrap(), 0.316_227_766_016_838, epsilon = 1e-12);
        assert_relative_eq!(p.sigma(0.5).unwrap(), 1.431_782_106_327_635, epsilon = 1e-12);
    }

    #[test]
    fn accumulated_rate_examples() {
        let p = desk();
        assert_relative_eq!(p.accumulated_rate(0.0, 1.0).unwrap(), 2.05, epsilon = 1e-14);
        assert_eq!(p.accumulated_rate(0.3, 0.3).unwrap(), 0.0);
        assert!(p.accumulated_rate(0.6, 0.2).is_err());
        let q = quadrature(|t| p.beta(t).unwrap(), 0.0, 0.5, 100_000);
        let b = p.accumulated_rate(0.0, 0.5).unwrap();
        assert_relative_eq!(b, 1.5125, max_relative = 1e-12);
        assert_relative_eq!(b, q, max_relative = 1e-8);
    }

    #[test]
    fn kappa_examples() {
        let p = desk();
        assert_eq!(p.kappa(1.0).unwrap(), 1.0);
        assert_eq!(p.kappa_bar(0.0).unwrap(), 1.0);
        let kb1 = p.kappa_bar(1.0).unwrap();
        assert_relative_eq!(kb1, (-1.025f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(kb1, 0.358_796, epsilon = 1e-6);
        let quad = (-0.5 * quadrature(|t| p.beta(t).unwrap(), 0.0, 1.0, 100_000)).exp();
        assert_relative_eq!(kb1, quad, max_relative = 1e-8);
        assert_relative_eq!(
            p.kappa(0.5).unwrap() * p.kappa_bar(0.5).unwrap(),
            kb1,
            max_relative = 1e-12
        );
    }

    #[test]
    fn transition_examples() {
        let p = desk();
        let x = array![1.0, 1.0];
        let (m, v) = p.transition_moments(0.4, 0.4, x.view()).unwrap();
        assert_eq!((m, v), (x.clone(), 0.0));
        let (m, v) = p.transition_moments(0.0, 1.0, x.view()).unwrap();
        assert_relative_eq!(m[0], 0.358_796_465_405_951_6, epsilon = 1e-12);
        assert_relative_eq!(m[1], 0.358_796_465_405_951_6, epsilon = 1e-12);
        assert_relative_eq!(v, 0.871_265_096_412_195_7, epsilon = 1e-12);
        assert!(p.transition_moments(0.9, 0.1, x.view()).is_err());

        let memoryless = ScheduleParams::new(20.0, 0.1, 1).unwrap();
        let (c, v) = memoryless.transition_coeffs(0.0, 1.0).unwrap();
        assert_relative_eq!(c, (-5.025f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(c, 0.006_571_586, epsilon = 1e-9);
        assert_relative_eq!(v, 0.999_957, epsilon = 1e-6);
    }

    #[test]
    fn kappa_product_constant_on_grid() {
        let p = desk();
        let kb1 = p.kappa_bar(1.0).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let prod = p.kappa(t).unwrap() * p.kappa_bar(t).unwrap();
            assert!((prod - kb1).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn standard_normal_is_stationary() {
        for p in [desk(), ScheduleParams::new(20.0, 0.1, 1).unwrap()] {
            let (c, v) = p.transition_coeffs(0.0, 1.0).unwrap();
            assert!((c * c + v - 1.0).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn semigroup(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0,
                     beta_max in 0.2f64..25.0) {
            let mut ts = [a, b, c];
            ts.sort_by(f64::total_cmp);
            let [s, r, t] = ts;
            let p = ScheduleParams::new(beta_max, 0.1, 1).unwrap();
            let (c_sr, v_sr) = p.transition_coeffs(s, r).unwrap();
            let (c_rt, v_rt) = p.transition_coeffs(r, t).unwrap();
            let (c_st, v_st) = p.transition_coeffs(s, t).unwrap();
            prop_assert!((c_sr * c_rt - c_st).abs() < 1e-12);
            prop_assert!((v_rt + c_rt * c_rt * v_sr - v_st).abs() < 1e-12);
        }

        #[test]
        fn closed_form_matches_quadrature(a in 0.0f64..1.0, b in 0.0f64..1.0,
                                          beta_max in 0.2f64..25.0) {
            let (s, t) = if a <= b { (a, b) } else { (b, a) };
            prop_assume!(t - s > 1e-6);
            let p = ScheduleParams::new(beta_max, 0.1, 1).unwrap();
            let q = quadrature(|u| p.beta(u).unwrap(), s, t, 100_000);
            let b = p.accumulated_rate(s, t).unwrap();
            prop_assert!(((b - q) / b).abs() < 1e-8);
        }
    }
}
