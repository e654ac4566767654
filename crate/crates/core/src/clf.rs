//! Learned control Lyapunov function and the runtime stabilizer that
//! corrects a learned flow `f(eps)` so that `V` decreases at least at the
//! rate `rho(|eps|)`.
//!
//! `V` is a weighted sum of asymmetric quadratic functions:
//!
//! ```text
//! V(eps) = eps' P0 eps + sum_l beta_l(eps) * (eps' Pl (eps - mu_l))^2
//! ```
//!
//! where `beta_l` is one when its bracket is non-negative and zero
//! otherwise. Every `P` is stored through its lower Cholesky factor, so the
//! fit is unconstrained and positive definiteness holds by construction.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::gmr::GmrModel;
use crate::optim::bfgs;
use crate::vision::{vs_baseline, CartesianError, Command, Controller, StepContext, Velocity};

type Vec3 = Vector3<f64>;

/// Below this norm the stabilizer treats `eps` as the equilibrium.
const ORIGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetricTerm {
    /// Lower Cholesky factor of `P_l`, row-major.
    pub factor: [f64; 9],
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfModel {
    /// Lower Cholesky factor of `P0`, row-major.
    pub base_factor: [f64; 9],
    pub components: Vec<AsymmetricTerm>,
}

fn lower(f: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::new(f[0], 0.0, 0.0, f[3], f[4], 0.0, f[6], f[7], f[8])
}

fn spd_from_factor(f: &[f64; 9]) -> Matrix3<f64> {
    let l = lower(f);
    l * l.transpose()
}

fn factor_of(m: &Matrix3<f64>) -> Option<[f64; 9]> {
    let l = m.cholesky()?.l();
    Some([l[(0, 0)], 0.0, 0.0, l[(1, 0)], l[(1, 1)], 0.0, l[(2, 0)], l[(2, 1)], l[(2, 2)]])
}

impl ClfModel {
    /// Pure quadratic `V = eps' P0 eps`.
    pub fn quadratic(p0: &Matrix3<f64>) -> Result<Self> {
        let base_factor = factor_of(p0).ok_or_else(|| Error::InvalidInput("P0 is not positive definite".into()))?;
        Ok(Self {
            base_factor,
            components: Vec::new(),
        })
    }

    pub fn with_term(mut self, p: &Matrix3<f64>, center: Vec3) -> Result<Self> {
        let factor = factor_of(p).ok_or_else(|| Error::InvalidInput("P_l is not positive definite".into()))?;
        self.components.push(AsymmetricTerm {
            factor,
            center: center.into(),
        });
        Ok(self)
    }

    pub fn base_matrix(&self) -> Matrix3<f64> {
        spd_from_factor(&self.base_factor)
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn evaluate(&self) -> ClfEval {
        ClfEval {
            base: self.base_matrix(),
            terms: self
                .components
                .iter()
                .map(|c| (spd_from_factor(&c.factor), Vec3::from(c.center)))
                .collect(),
        }
    }

    pub fn value_and_grad(&self, eps: &Vec3) -> (f64, Vec3) {
        self.evaluate().value_and_grad(eps)
    }
}

/// Expanded matrices of a [`ClfModel`], for repeated evaluation.
#[derive(Debug, Clone)]
pub struct ClfEval {
    base: Matrix3<f64>,
    terms: Vec<(Matrix3<f64>, Vec3)>,
}

impl ClfEval {
    pub fn value_and_grad(&self, eps: &Vec3) -> (f64, Vec3) {
        let pe = self.base * eps;
        let mut value = eps.dot(&pe);
        let mut grad = 2.0 * pe;
        for (p, mu) in &self.terms {
            let p_eps = p * eps;
            let p_mu = p * mu;
            let a = eps.dot(&p_eps) - eps.dot(&p_mu);
            if a >= 0.0 {
                value += a * a;
                grad += 2.0 * a * (2.0 * p_eps - p_mu);
            }
        }
        (value, grad)
    }
}

/// Minimum decrease rate `rho(|eps|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecreaseRate {
    /// `rho0 * |eps|`
    Linear,
    /// `rho0 * |eps|^2`
    Quadratic,
}

impl DecreaseRate {
    pub fn eval(self, rho0: f64, eps_norm: f64) -> f64 {
        match self {
            DecreaseRate::Linear => rho0 * eps_norm,
            DecreaseRate::Quadratic => rho0 * eps_norm * eps_norm,
        }
    }
}

/// The three-case stabilizing input. `origin` selects the equilibrium case.
pub fn stabilizing_input(grad: &Vec3, f_hat: &Vec3, rho: f64, origin: bool, eps_norm: f64) -> Result<Vec3> {
    if origin {
        return Ok(-f_hat);
    }
    let v_dot = grad.dot(f_hat);
    if v_dot <= -rho {
        return Ok(Vec3::zeros());
    }
    let g2 = grad.norm_squared();
    if g2.sqrt() < 1e-12 {
        return Err(Error::VanishingGradient { norm: eps_norm });
    }
    Ok(-((v_dot + rho) / g2) * grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfConfig {
    /// Number of asymmetric terms.
    pub components: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Surrogate margin on the normalized decrease.
    pub margin: f64,
    /// Softplus sharpness.
    pub sharpness: f64,
    /// Weight of the quadratic penalty on the scale-free parameters.
    pub regularization: f64,
    /// Largest acceptable violation fraction after all restarts.
    pub violation_ceiling: f64,
}

impl Default for ClfConfig {
    fn default() -> Self {
        Self {
            components: 2,
            restarts: 5,
            max_iter: 200,
            margin: 1e-4,
            sharpness: 10.0,
            regularization: 1e-3,
            violation_ceiling: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClfFit {
    pub model: ClfModel,
    /// Fraction of training points with `grad V . f >= 0`.
    pub violation_fraction: f64,
    pub objective: f64,
    pub training_time: Duration,
}

/// Number of training points with `grad V . f >= 0`, skipping the
/// equilibrium and points at rest where the decrease is trivially zero.
pub fn count_violations(model: &ClfModel, training: &TrainingSet) -> (usize, usize) {
    let eval = model.evaluate();
    let mut violations = 0;
    let mut total = 0;
    for p in training.pairs.iter().filter(|p| eligible(&p.input, &p.output)) {
        total += 1;
        if eval.value_and_grad(&p.input).1.dot(&p.output) >= 0.0 {
            violations += 1;
        }
    }
    (violations, total)
}

fn eligible(eps: &Vec3, f: &Vec3) -> bool {
    eps.norm() > ORIGIN_TOL && f.norm() > ORIGIN_TOL
}

const BASE_PARAMS: usize = 6;
const TERM_PARAMS: usize = 9;

/// Parameter layout: six entries per factor (log-diagonal, then the three
/// strictly lower entries), followed by the center for asymmetric terms.
/// Asymmetric factors and centers are expressed relative to the data
/// radius `scale`, so all-zero parameters describe a well-conditioned `V`
/// at any data scale.
fn factor_from_params(p: &[f64], gain: f64) -> [f64; 9] {
    [
        gain * p[0].exp(),
        0.0,
        0.0,
        gain * p[3],
        gain * p[1].exp(),
        0.0,
        gain * p[4],
        gain * p[5],
        gain * p[2].exp(),
    ]
}

fn model_from_params(theta: &[f64], terms: usize, scale: f64) -> ClfModel {
    let gain = scale.sqrt().recip();
    let components = (0..terms)
        .map(|l| {
            let off = BASE_PARAMS + l * TERM_PARAMS;
            AsymmetricTerm {
                factor: factor_from_params(&theta[off..off + 6], gain),
                center: [theta[off + 6] * scale, theta[off + 7] * scale, theta[off + 8] * scale],
            }
        })
        .collect();
    ClfModel {
        base_factor: factor_from_params(&theta[..6], 1.0),
        components,
    }
}

/// Rescales `V` so that `trace(P0) = 3`. The sign pattern of the decrease
/// is unchanged.
fn normalized(model: ClfModel) -> ClfModel {
    let trace = model.base_matrix().trace();
    if !(trace > 0.0) {
        return model;
    }
    let c = 3.0 / trace;
    let (s_base, s_term) = (c.sqrt(), c.powf(0.25));
    ClfModel {
        base_factor: model.base_factor.map(|v| v * s_base),
        components: model
            .components
            .into_iter()
            .map(|t| AsymmetricTerm {
                factor: t.factor.map(|v| v * s_term),
                center: t.center,
            })
            .collect(),
    }
}

/// Fits `V` by minimizing a softplus surrogate of the number of training
/// points at which `V` does not decrease along the demonstrated flow.
pub fn learn_clf(training: &TrainingSet, seed: u64, config: &ClfConfig) -> Result<ClfFit> {
    let start = Instant::now();
    let pairs: Vec<(Vec3, Vec3)> = training
        .pairs
        .iter()
        .filter(|p| eligible(&p.input, &p.output))
        .map(|p| (p.input, p.output.normalize()))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no usable training pairs for the lyapunov fit".into()));
    }
    let terms = config.components;
    let scale = pairs.iter().map(|(e, _)| e.norm()).fold(0.0, f64::max);
    let (margin, sharp, reg) = (config.margin, config.sharpness, config.regularization);
    let objective = |theta: &[f64]| -> f64 {
        let eval = model_from_params(theta, terms, scale).evaluate();
        let mut sum = 0.0;
        for (eps, f) in &pairs {
            let g = eval.value_and_grad(eps).1;
            let gn = g.norm();
            let cos = if gn > 0.0 { g.dot(f) / gn } else { 0.0 };
            let x = sharp * (cos + margin);
            sum += if x > 30.0 { x } else { x.exp().ln_1p() };
        }
        sum / (sharp * pairs.len() as f64) + reg * theta.iter().map(|t| t * t).sum::<f64>()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, ClfModel)> = None;
    for restart in 0..config.restarts.max(1) {
        let mut theta0 = vec![0.0; BASE_PARAMS + terms * TERM_PARAMS];
        for l in 0..terms {
            let off = BASE_PARAMS + l * TERM_PARAMS;
            let diag = if restart == 0 { 0.0 } else { rng.random_range(-1.0..1.0) };
            for d in 0..3 {
                theta0[off + d] = diag;
            }
            let anchor = pairs[rng.random_range(0..pairs.len())].0 / scale;
            for d in 0..3 {
                theta0[off + 6 + d] = anchor[d] * rng.random_range(0.5..1.5);
            }
        }
        if restart > 0 {
            for v in theta0.iter_mut().take(BASE_PARAMS) {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let min = bfgs(&objective, &theta0, config.max_iter, 1e-9);
        let model = normalized(model_from_params(&min.x, terms, scale));
        let (viol, _) = count_violations(&model, training);
        let better = match &best {
            None => true,
            Some((bv, bo, _)) => viol < *bv || (viol == *bv && min.value < *bo),
        };
        if better {
            best = Some((viol, min.value, model));
        }
    }
    let (viol, value, model) = best.expect("at least one restart");
    let (_, total) = count_violations(&model, training);
    let fraction = viol as f64 / total.max(1) as f64;
    if fraction > config.violation_ceiling {
        return Err(Error::OptimizationFailed {
            fraction,
            ceiling: config.violation_ceiling,
        });
    }
    Ok(ClfFit {
        model,
        violation_fraction: fraction,
        objective: value,
        training_time: start.elapsed(),
    })
}

/// Serialized CLF-DM controller parameters (the flow model is stored
/// separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfArtifact {
    pub clf: ClfModel,
    pub num_components: usize,
    pub rho0: f64,
    pub rate: DecreaseRate,
}

#[derive(Debug, Clone)]
pub struct ClfDmController {
    pub flow: GmrModel,
    pub clf: ClfModel,
    pub rho0: f64,
    pub rate: DecreaseRate,
    /// Gain of the fallback law used when the gradient of `V` vanishes.
    pub lambda: f64,
    /// Sampling period and ratio `r`; when set, the command is scaled so that
    /// one period moves `ε` by at most `r·‖ε‖`.
    pub step_limit: Option<(f64, f64)>,
    eval: ClfEval,
}

/// One evaluation of the stabilized law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClfStep {
    pub velocity: Velocity,
    pub value: f64,
    pub rho: f64,
    pub fallback: bool,
}

impl ClfDmController {
    pub fn new(flow: GmrModel, clf: ClfModel, rho0: f64, rate: DecreaseRate, lambda: f64) -> Result<Self> {
        if !(rho0 > 0.0) {
            return Err(Error::Config(format!("rho0 must be positive, got {rho0}")));
        }
        let eval = clf.evaluate();
        Ok(Self {
            flow,
            clf,
            rho0,
            rate,
            lambda,
            step_limit: None,
            eval,
        })
    }

    /// Caps the displacement per period of `period` at `ratio·‖ε‖`.
    pub fn with_step_limit(mut self, period: f64, ratio: f64) -> Result<Self> {
        if !(period > 0.0 && ratio > 0.0) {
            return Err(Error::Config(format!("step limit needs positive period and ratio, got {period} and {ratio}")));
        }
        self.step_limit = Some((period, ratio));
        Ok(self)
    }

    fn limited(&self, v: Velocity, eps_norm: f64) -> Velocity {
        match self.step_limit {
            Some((period, ratio)) => {
                let reach = period * v.norm();
                let max = ratio * eps_norm;
                if reach > max {
                    v * (max / reach)
                } else {
                    v
                }
            }
            None => v,
        }
    }

    pub fn rho(&self, eps_norm: f64) -> f64 {
        self.rate.eval(self.rho0, eps_norm)
    }

    pub fn value_and_grad(&self, eps: &Vec3) -> (f64, Vec3) {
        self.eval.value_and_grad(eps)
    }

    pub fn u_clf(&self, eps: &CartesianError, f_hat: &Vec3) -> Result<Vec3> {
        let n = eps.norm();
        let grad = self.eval.value_and_grad(eps).1;
        stabilizing_input(&grad, f_hat, self.rho(n), n <= ORIGIN_TOL, n)
    }

    pub fn step(&self, eps: &CartesianError) -> ClfStep {
        let n = eps.norm();
        let f_hat = self.flow.predict_mean(eps);
        let (value, grad) = self.eval.value_and_grad(eps);
        let rho = self.rho(n);
        match stabilizing_input(&grad, &f_hat, rho, n <= ORIGIN_TOL, n) {
            Ok(u) => ClfStep {
                velocity: self.limited(f_hat + u, n),
                value,
                rho,
                fallback: false,
            },
            Err(_) => ClfStep {
                velocity: vs_baseline(eps, self.lambda),
                value,
                rho,
                fallback: true,
            },
        }
    }

    pub fn velocity(&self, eps: &CartesianError) -> Velocity {
        self.step(eps).velocity
    }

    pub fn artifact(&self) -> ClfArtifact {
        ClfArtifact {
            clf: self.clf.clone(),
            num_components: self.clf.num_components(),
            rho0: self.rho0,
            rate: self.rate,
        }
    }
}

impl Controller for ClfDmController {
    fn command(&self, ctx: &StepContext<'_>) -> Result<Command> {
        let s = self.step(&ctx.epsilon);
        Ok(Command {
            velocity: s.velocity,
            lyapunov: Some(s.value),
            fallback: s.fallback,
            ..Command::default()
        })
    }
}
