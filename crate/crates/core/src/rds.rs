//! Reshaped visual servoing: `v = -lambda * eps + h(t) * u(eps)`.
//!
//! `u` is a mixture regression of the reshaping targets `v + lambda * eps`
//! and `h` is a clock that holds at one and then decays to zero, after
//! which the classical law is recovered exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmr::GmrModel;
use crate::vision::{vs_baseline, CartesianError, Command, Controller, StepContext, Velocity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClockSignal {
    /// `h = 1` for all times.
    AlwaysOn,
    /// `h = 0` for all times.
    Off,
    /// `h = 1` up to `t0`, then `exp(-(t - t0) / decay_tau)`.
    HoldThenDecay { t0: f64, decay_tau: f64 },
}

impl ClockSignal {
    pub fn hold_then_decay(t0: f64, decay_tau: f64) -> Result<Self> {
        if !(t0 >= 0.0) || !(decay_tau > 0.0) {
            return Err(Error::Config(format!(
                "clock needs t0 >= 0 and decay_tau > 0 (got {t0}, {decay_tau})"
            )));
        }
        Ok(ClockSignal::HoldThenDecay { t0, decay_tau })
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ClockSignal::AlwaysOn => 1.0,
            ClockSignal::Off => 0.0,
            ClockSignal::HoldThenDecay { t0, decay_tau } => {
                if t <= t0 {
                    1.0
                } else {
                    (-(t - t0) / decay_tau).exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RdsController {
    pub model: GmrModel,
    pub lambda: f64,
    pub clock: ClockSignal,
}

impl RdsController {
    pub fn new(model: GmrModel, lambda: f64, clock: ClockSignal) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { model, lambda, clock })
    }

    pub fn reshaping(&self, eps: &CartesianError) -> Velocity {
        self.model.predict_mean(eps)
    }

    /// Returns the commanded velocity and the clock value used.
    pub fn velocity(&self, eps: &CartesianError, t: f64) -> (Velocity, f64) {
        let h = self.clock.value(t);
        let base = vs_baseline(eps, self.lambda);
        if h == 0.0 {
            return (base, h);
        }
        (base + h * self.reshaping(eps), h)
    }
}

impl Controller for RdsController {
    fn command(&self, ctx: &StepContext<'_>) -> Result<Command> {
        let (velocity, h) = self.velocity(&ctx.epsilon, ctx.time);
        Ok(Command {
            velocity,
            clock: Some(h),
            ..Command::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector, Vector3};

    use super::*;
    use crate::gmr::GaussianComponent;

    fn constant_model(out: [f64; 3]) -> GmrModel {
        let mean = DVector::from_column_slice(&[0.0, 0.0, 0.0, out[0], out[1], out[2]]);
        GmrModel::new(
            vec![GaussianComponent {
                prior: 1.0,
                mean,
                covariance: DMatrix::identity(6, 6),
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn clock_values() {
        let c = ClockSignal::hold_then_decay(3.0, 0.5).unwrap();
        assert_eq!(c.value(0.0), 1.0);
        assert_eq!(c.value(3.0), 1.0);
        assert_abs_diff_eq!(c.value(3.5), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.value(3.5), 0.3679, epsilon = 1e-4);
        assert!(c.value(1e4) < 1e-300);
        assert!(ClockSignal::hold_then_decay(1.0, 0.0).is_err());
    }

    #[test]
    fn clock_is_monotone_and_bounded() {
        let c = ClockSignal::hold_then_decay(0.7, 0.2).unwrap();
        let vals: Vec<f64> = (0..500).map(|i| c.value(i as f64 * 0.01)).collect();
        assert!(vals.iter().all(|&h| (0.0..=1.0).contains(&h)));
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn extinct_clock_is_bit_identical_to_baseline() {
        let ctrl = RdsController::new(constant_model([0.3, -0.1, 0.2]), 1.3, ClockSignal::Off).unwrap();
        let eps = Vector3::new(0.12, -0.07, 0.31);
        assert_eq!(ctrl.velocity(&eps, 5.0).0, vs_baseline(&eps, 1.3));
    }

    #[test]
    fn origin_query_returns_reshaping_term() {
        let ctrl = RdsController::new(constant_model([0.3, -0.1, 0.2]), 1.0, ClockSignal::AlwaysOn).unwrap();
        let (v, h) = ctrl.velocity(&Vector3::zeros(), 0.0);
        assert_eq!(h, 1.0);
        assert_abs_diff_eq!(v, Vector3::new(0.3, -0.1, 0.2), epsilon = 1e-15);
    }

    #[test]
    fn non_positive_gain_is_rejected() {
        assert!(RdsController::new(constant_model([0.0; 3]), 0.0, ClockSignal::Off).is_err());
    }
}
