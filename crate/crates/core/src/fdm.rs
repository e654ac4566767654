//! Diffeomorphic matching: a composition of Gaussian locally weighted
//! translations that bends a straight-line error trajectory onto the
//! averaged demonstration, and the controller that follows the bent flow.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataset::FdmTraining;
use crate::error::{Error, Result};
use crate::vision::{CartesianError, Command, Controller, StepContext, Velocity};

type Vec3 = Vector3<f64>;

/// `sup |grad k|` for `k(x) = exp(-|x|^2 / w^2)` is this constant over `w`.
const KERNEL_SLOPE: f64 = 0.857_763_884_960_706_8; // sqrt(2) * exp(-1/2)
/// Fraction of the invertibility bound a translation may use.
const MARGIN: f64 = 0.99;
const INVERSE_TOL: f64 = 1e-12;
const INVERSE_MAX_ITER: usize = 200;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocallyWeightedTranslation {
    pub center: [f64; 3],
    pub translation: [f64; 3],
    pub width: f64,
}

impl LocallyWeightedTranslation {
    /// Builds a step, shrinking the translation if needed so the step stays
    /// invertible.
    pub fn clipped(center: Vec3, translation: Vec3, width: f64) -> Self {
        let limit = Self::max_translation(width);
        let norm = translation.norm();
        let t = if norm > limit { translation * (limit / norm) } else { translation };
        Self {
            center: center.into(),
            translation: t.into(),
            width,
        }
    }

    /// Largest translation norm that keeps the step invertible.
    pub fn max_translation(width: f64) -> f64 {
        MARGIN * width / KERNEL_SLOPE
    }

    /// `|t| * sup |grad k|`; a step is a diffeomorphism when this is below one.
    pub fn contraction(&self) -> f64 {
        Vec3::from(self.translation).norm() * KERNEL_SLOPE / self.width
    }

    fn weight(&self, x: &Vec3) -> f64 {
        let d = x - Vec3::from(self.center);
        (-d.norm_squared() / (self.width * self.width)).exp()
    }

    fn weight_grad(&self, x: &Vec3) -> Vec3 {
        let d = x - Vec3::from(self.center);
        let w2 = self.width * self.width;
        (-2.0 / w2) * (-d.norm_squared() / w2).exp() * d
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        x + self.weight(x) * Vec3::from(self.translation)
    }

    pub fn jacobian(&self, x: &Vec3) -> Matrix3<f64> {
        Matrix3::identity() + Vec3::from(self.translation) * self.weight_grad(x).transpose()
    }

    /// Solves `x + k(x) t = y`. Writing `x = y - a t` reduces this to the
    /// scalar equation `a = k(y - a t)`, whose root lies in `[0, 1]` and is
    /// unique under the margin.
    pub fn inverse(&self, y: &Vec3) -> Option<Vec3> {
        let t = Vec3::from(self.translation);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut a = self.weight(y);
        for _ in 0..INVERSE_MAX_ITER {
            let x = y - a * t;
            let g = a - self.weight(&x);
            if g.abs() <= INVERSE_TOL {
                return Some(x);
            }
            if g > 0.0 {
                hi = a;
            } else {
                lo = a;
            }
            let slope = 1.0 + self.weight_grad(&x).dot(&t);
            let next = a - g / slope;
            a = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        None
    }
}

/// Ordered composition of locally weighted translations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiffeoMap {
    pub steps: Vec<LocallyWeightedTranslation>,
}

impl DiffeoMap {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn apply(&self, z: &Vec3) -> Vec3 {
        self.steps.iter().fold(*z, |x, s| s.apply(&x))
    }

    pub fn jacobian(&self, z: &Vec3) -> Matrix3<f64> {
        let mut x = *z;
        let mut jac = Matrix3::identity();
        for s in &self.steps {
            jac = s.jacobian(&x) * jac;
            x = s.apply(&x);
        }
        jac
    }

    pub fn inverse(&self, eps: &Vec3) -> Result<Vec3> {
        let mut x = *eps;
        for (i, s) in self.steps.iter().enumerate().rev() {
            x = s.inverse(&x).ok_or(Error::InverseDiverged { step: i })?;
        }
        Ok(x)
    }

    /// Checks the per-step invertibility condition.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.width > 0.0) || !(s.contraction() < 1.0) {
                return Err(Error::InvalidInput(format!("step {i} violates the invertibility margin")));
            }
        }
        Ok(())
    }
}

/// Kernel width for a new step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WidthRule {
    Fixed { width: f64 },
    /// `scale` times the distance from the moved point to its nearest neighbour.
    NearestPoint { scale: f64 },
    /// `scale` times the size of the mismatch being corrected.
    Mismatch { scale: f64 },
    /// Tries `candidates` widths spaced geometrically between `min_scale`
    /// and `max_scale` times the mismatch and keeps the one that minimizes
    /// the summed squared mismatch.
    Search { min_scale: f64, max_scale: f64, candidates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdmConfig {
    pub step_fraction: f64,
    pub width_rule: WidthRule,
    pub stop_tol: f64,
}

impl Default for FdmConfig {
    fn default() -> Self {
        Self {
            step_fraction: 0.9,
            width_rule: WidthRule::Search {
                min_scale: 0.25,
                max_scale: 16.0,
                candidates: 13,
            },
            stop_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffeoFit {
    pub map: DiffeoMap,
    /// Largest point mismatch before any step and after each step.
    pub residuals: Vec<f64>,
    pub training_time: Duration,
}

impl DiffeoFit {
    pub fn residual(&self) -> f64 {
        *self.residuals.last().expect("initial residual is always recorded")
    }
}

fn max_mismatch(image: &[Vec3], target: &[Vec3]) -> (usize, f64) {
    image
        .iter()
        .zip(target)
        .map(|(a, b)| (b - a).norm())
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best })
}

fn sum_squared_mismatch(image: &[Vec3], target: &[Vec3]) -> f64 {
    image.iter().zip(target).map(|(a, b)| (b - a).norm_squared()).sum()
}

fn width_for(rule: WidthRule, image: &[Vec3], j: usize, mismatch: f64) -> f64 {
    match rule {
        WidthRule::Fixed { width } => width,
        WidthRule::Mismatch { scale } => scale * mismatch,
        WidthRule::Search { .. } => mismatch,
        WidthRule::NearestPoint { scale } => {
            let nearest = image
                .iter()
                .enumerate()
                .filter(|&(i, p)| i != j && *p != image[j])
                .map(|(_, p)| (p - image[j]).norm())
                .fold(f64::INFINITY, f64::min);
            if nearest.is_finite() {
                scale * nearest
            } else {
                scale * mismatch
            }
        }
    }
}

/// Greedy matching of `source[n]` onto `target[n]`.
pub fn match_points(source: &[Vec3], target: &[Vec3], max_steps: usize, config: &FdmConfig) -> Result<DiffeoFit> {
    let start = Instant::now();
    if source.len() != target.len() {
        return Err(Error::UnequalLengths {
            expected: source.len(),
            found: target.len(),
        });
    }
    if source.is_empty() {
        return Err(Error::TooShort { len: 0 });
    }
    if !(config.step_fraction > 0.0 && config.step_fraction <= 1.0) {
        return Err(Error::Config(format!("step_fraction must lie in (0, 1], got {}", config.step_fraction)));
    }
    let mut image = source.to_vec();
    let mut map = DiffeoMap::identity();
    let (mut worst, mut residual) = max_mismatch(&image, target);
    let mut residuals = vec![residual];
    let mut stalled = 0;
    let mut candidate = image.clone();
    while map.len() < max_steps && residual >= config.stop_tol {
        let mismatch = target[worst] - image[worst];
        let widths: Vec<f64> = match config.width_rule {
            WidthRule::Search {
                min_scale,
                max_scale,
                candidates,
            } => {
                let ratio = (max_scale / min_scale).powf(1.0 / candidates.saturating_sub(1).max(1) as f64);
                (0..candidates.max(1))
                    .map(|i| mismatch.norm() * min_scale * ratio.powi(i as i32))
                    .collect()
            }
            rule => vec![width_for(rule, &image, worst, mismatch.norm())],
        };
        let mut accepted: Option<(LocallyWeightedTranslation, usize, f64, f64)> = None;
        for width in widths {
            if !(width > 0.0) {
                return Err(Error::Config(format!("kernel width must be positive, got {width}")));
            }
            let mut translation = config.step_fraction * mismatch;
            for _ in 0..40 {
                let step = LocallyWeightedTranslation::clipped(image[worst], translation, width);
                for (c, p) in candidate.iter_mut().zip(&image) {
                    *c = step.apply(p);
                }
                let (w, r) = max_mismatch(&candidate, target);
                if r <= residual {
                    let total = sum_squared_mismatch(&candidate, target);
                    if accepted.as_ref().is_none_or(|a| total < a.3) {
                        accepted = Some((step, w, r, total));
                    }
                    break;
                }
                translation *= 0.5;
            }
        }
        let Some((step, w, r, _)) = accepted else {
            return Err(Error::Stalled {
                steps: map.len(),
                residual,
            });
        };
        for (c, p) in candidate.iter_mut().zip(&image) {
            *c = step.apply(p);
        }
        if residual - r < 1e-12 {
            stalled += 1;
            if stalled >= 10 {
                return Err(Error::Stalled { steps: map.len(), residual });
            }
        } else {
            stalled = 0;
        }
        map.steps.push(step);
        std::mem::swap(&mut image, &mut candidate);
        worst = w;
        residual = r;
        residuals.push(r);
    }
    Ok(DiffeoFit {
        map,
        residuals,
        training_time: start.elapsed(),
    })
}

/// Learns the map sending the straight-line trajectory onto the averaged
/// demonstration.
pub fn fast_diffeo_match(training: &FdmTraining, max_steps: usize, config: &FdmConfig) -> Result<DiffeoFit> {
    let start = Instant::now();
    let target: Vec<Vec3> = training.set.inputs().collect();
    let source: Vec<Vec3> = training.set.outputs().collect();
    let mut fit = match_points(&source, &target, max_steps, config)?;
    fit.training_time = start.elapsed();
    Ok(fit)
}

/// Where the map's Jacobian is evaluated in the control law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianAt {
    /// `v = -gamma(|eps|) J(eps)^-1 eps`.
    Epsilon,
    /// `v = -gamma(|z|) J(z) z` with `z` the pre-image of `eps`.
    #[default]
    Preimage,
}

/// Time-scaling gain that makes the straight-line flow cover the initial
/// error in `samples` periods.
pub fn gamma(eps_norm: f64, eps1_norm: f64, samples: usize, period: f64) -> f64 {
    let n = samples as f64;
    if eps_norm >= eps1_norm / n {
        eps1_norm / (n * period * eps_norm)
    } else {
        eps1_norm / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmController {
    pub map: DiffeoMap,
    pub eps1_norm: f64,
    pub samples: usize,
    pub period: f64,
    pub jacobian_at: JacobianAt,
}

/// One evaluation of the law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdmStep {
    pub velocity: Velocity,
    pub gamma: f64,
}

impl FdmController {
    pub fn new(map: DiffeoMap, eps1_norm: f64, samples: usize, period: f64, jacobian_at: JacobianAt) -> Result<Self> {
        if !(eps1_norm > 0.0) || samples < 2 || !(period > 0.0) {
            return Err(Error::Config(format!(
                "fdm controller needs |eps1| > 0, N >= 2, T > 0 (got {eps1_norm}, {samples}, {period})"
            )));
        }
        map.validate()?;
        Ok(Self {
            map,
            eps1_norm,
            samples,
            period,
            jacobian_at,
        })
    }

    pub fn gamma(&self, eps_norm: f64) -> f64 {
        gamma(eps_norm, self.eps1_norm, self.samples, self.period)
    }

    pub fn step(&self, eps: &CartesianError) -> Result<FdmStep> {
        match self.jacobian_at {
            JacobianAt::Epsilon => {
                let g = self.gamma(eps.norm());
                let jac = self.map.jacobian(eps);
                let sv = jac.singular_values();
                let condition = sv.max() / sv.min();
                if !(condition <= MAX_CONDITION) {
                    return Err(Error::SingularJacobian { condition });
                }
                let x = jac.lu().solve(eps).ok_or(Error::SingularJacobian { condition })?;
                Ok(FdmStep {
                    velocity: -g * x,
                    gamma: g,
                })
            }
            JacobianAt::Preimage => {
                let z = self.map.inverse(eps)?;
                let g = self.gamma(z.norm());
                Ok(FdmStep {
                    velocity: -g * (self.map.jacobian(&z) * z),
                    gamma: g,
                })
            }
        }
    }

    pub fn velocity(&self, eps: &CartesianError) -> Result<Velocity> {
        Ok(self.step(eps)?.velocity)
    }
}

impl Controller for FdmController {
    fn command(&self, ctx: &StepContext<'_>) -> Result<Command> {
        let s = self.step(&ctx.epsilon)?;
        Ok(Command {
            velocity: s.velocity,
            gamma: Some(s.gamma),
            ..Command::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_map(seed: u64, steps: usize) -> DiffeoMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = DiffeoMap::identity();
        for _ in 0..steps {
            let c = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let t = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let w = rng.random_range(0.05..0.6);
            map.steps.push(LocallyWeightedTranslation::clipped(c, t, w));
        }
        map
    }

    #[test]
    fn identity_map() {
        let m = DiffeoMap::identity();
        let z = Vec3::new(0.3, -0.2, 0.7);
        assert_eq!(m.apply(&z), z);
        assert_eq!(m.jacobian(&z), Matrix3::identity());
        assert_eq!(m.inverse(&z).unwrap(), z);
    }

    #[test]
    fn far_from_center_is_untouched() {
        let s = LocallyWeightedTranslation::clipped(Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0), 0.05);
        let z = Vec3::new(2.0, 0.0, 0.0);
        assert_abs_diff_eq!(s.apply(&z), z, epsilon = 1e-300);
    }

    #[test]
    fn clipped_steps_respect_the_margin() {
        let s = LocallyWeightedTranslation::clipped(Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0), 0.1);
        assert_abs_diff_eq!(s.contraction(), MARGIN, epsilon = 1e-12);
        assert_abs_diff_eq!(KERNEL_SLOPE, 2f64.sqrt() * (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn round_trip_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..5 {
            let m = random_map(seed, 40);
            for _ in 0..200 {
                let z = Vec3::from_fn(|_, _| rng.random_range(-0.8..0.8));
                let back = m.inverse(&m.apply(&z)).unwrap();
                assert!((back - z).norm() < 1e-9, "{}", (back - z).norm());
            }
        }
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(seed in 0u64..50, x in -0.6..0.6f64, y in -0.6..0.6f64, z in -0.6..0.6f64) {
            let m = random_map(seed, 20);
            let p = Vec3::new(x, y, z);
            let jac = m.jacobian(&p);
            let h = 1e-6;
            let mut fd = Matrix3::zeros();
            for i in 0..3 {
                let mut a = p;
                let mut b = p;
                a[i] += h;
                b[i] -= h;
                fd.set_column(i, &((m.apply(&a) - m.apply(&b)) / (2.0 * h)));
            }
            prop_assert!((jac - fd).norm() <= 1e-6 * jac.norm(), "{jac} vs {fd}");
        }
    }

    fn line(n: usize) -> Vec<Vec3> {
        (0..n).map(|i| Vec3::new(0.3, 0.1, 0.2) * (1.0 - i as f64 / n as f64)).collect()
    }

    #[test]
    fn matching_identical_points_takes_no_steps() {
        let pts = line(20);
        let fit = match_points(&pts, &pts, 50, &FdmConfig::default()).unwrap();
        assert!(fit.map.is_empty());
        assert_eq!(fit.residual(), 0.0);
    }

    #[test]
    fn constant_shift_with_a_wide_kernel() {
        let src = line(20);
        let c = Vec3::new(0.01, -0.02, 0.005);
        let dst: Vec<Vec3> = src.iter().map(|p| p + c).collect();
        let cfg = FdmConfig {
            step_fraction: 1.0,
            width_rule: WidthRule::Fixed { width: 1e4 },
            stop_tol: 1e-6,
        };
        let fit = match_points(&src, &dst, 5, &cfg).unwrap();
        assert_eq!(fit.map.len(), 1);
        assert_abs_diff_eq!(Vec3::from(fit.map.steps[0].translation), c, epsilon = 1e-12);
        assert!(fit.residual() < 1e-6);
    }

    #[test]
    fn unequal_lengths_are_rejected() {
        assert!(matches!(
            match_points(&line(3), &line(4), 5, &FdmConfig::default()),
            Err(Error::UnequalLengths { .. })
        ));
    }

    #[test]
    fn gamma_branches() {
        assert_abs_diff_eq!(gamma(1.0, 1.0, 100, 0.03), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(gamma(0.005, 1.0, 100, 0.03), 0.01);
        assert_eq!(gamma(1e-9, 1.0, 100, 0.03), 0.01);
        assert_abs_diff_eq!(gamma(0.01, 1.0, 100, 0.03), 1.0 / 0.03, epsilon = 1e-9);
    }

    #[test]
    fn identity_map_gives_variable_gain_baseline() {
        for mode in [JacobianAt::Epsilon, JacobianAt::Preimage] {
            let ctrl = FdmController::new(DiffeoMap::identity(), 0.5, 100, 0.03, mode).unwrap();
            let eps = Vec3::new(0.1, 0.2, -0.05);
            let g = ctrl.gamma(eps.norm());
            assert_abs_diff_eq!(ctrl.velocity(&eps).unwrap(), -g * eps, epsilon = 1e-15);
            assert_eq!(ctrl.velocity(&Vec3::zeros()).unwrap(), Vec3::zeros());
        }
    }

    #[test]
    fn epsilon_mode_at_origin_is_still() {
        let ctrl = FdmController::new(random_map(3, 10), 0.5, 100, 0.03, JacobianAt::Epsilon).unwrap();
        assert_eq!(ctrl.velocity(&Vec3::zeros()).unwrap(), Vec3::zeros());
    }

    #[test]
    fn identity_closed_loop_shrinks_every_step() {
        let ctrl = FdmController::new(DiffeoMap::identity(), 0.5, 100, 0.03, JacobianAt::Epsilon).unwrap();
        let mut eps = Vec3::new(0.3, -0.3, 0.2);
        for _ in 0..400 {
            let g = ctrl.gamma(eps.norm());
            let next = eps + 0.03 * ctrl.velocity(&eps).unwrap();
            if g * 0.03 < 1.0 {
                assert!(next.norm() < eps.norm());
            }
            eps = next;
        }
    }

    #[test]
    fn json_is_an_ordered_list_of_steps() {
        let m = random_map(1, 3);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.starts_with("[{\"center\":"));
        let back: DiffeoMap = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
