//! Gaussian mixture models fitted by EM, and Gaussian mixture regression
//! on the joint `(input, output)` density.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    /// Covariance regularization as a fraction of the mean data variance.
    pub reg_scale: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            reg_scale: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub prior: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub components: Vec<GaussianComponent>,
    /// Log-likelihood after every E-step, in iteration order.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub reg: f64,
    pub training_time: Duration,
}

struct Chol {
    /// Inverse of the lower Cholesky factor, row-major `d x d`.
    inv_lower: Vec<f64>,
    log_det: f64,
}

fn cholesky_inverse(cov: &DMatrix<f64>) -> Option<Chol> {
    let chol = cov.clone().cholesky()?;
    let l = chol.l();
    let d = l.nrows();
    let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
    let inv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
    let mut inv_lower = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..=r {
            inv_lower[r * d + c] = inv[(r, c)];
        }
    }
    Some(Chol { inv_lower, log_det })
}

fn log_gauss(x: &[f64], mean: &[f64], chol: &Chol, scratch: &mut [f64]) -> f64 {
    let d = x.len();
    for (s, (a, b)) in scratch.iter_mut().zip(x.iter().zip(mean)) {
        *s = a - b;
    }
    let mut maha = 0.0;
    for r in 0..d {
        let row = &chol.inv_lower[r * d..r * d + r + 1];
        let z: f64 = row.iter().zip(&scratch[..=r]).map(|(a, b)| a * b).sum();
        maha += z * z;
    }
    -0.5 * (d as f64 * LN_2PI + chol.log_det + maha)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations; returns the hard
/// assignment of every point.
fn kmeans_assignments(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rows.len();
    let mut centers: Vec<Vec<f64>> = vec![rows[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| squared_distance(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].to_vec());
        for (slot, r) in d2.iter_mut().zip(rows) {
            *slot = slot.min(squared_distance(r, &centers[centers.len() - 1]));
        }
    }
    let mut assign = vec![0; n];
    for _ in 0..20 {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| {
                    squared_distance(r, &centers[a]).total_cmp(&squared_distance(r, &centers[b]))
                })
                .unwrap_or(0);
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&&[f64]> = rows.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Fits a `k`-component full-covariance mixture to the rows of `data`.
pub fn fit_mixture(data: &DMatrix<f64>, k: usize, seed: u64, config: &EmConfig) -> Result<MixtureFit> {
    let start = Instant::now();
    let (n, d) = data.shape();
    if k == 0 {
        return Err(Error::InvalidInput("mixture needs at least one component".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} samples cannot support {k} components")));
    }
    let flat: Vec<f64> = data.transpose().as_slice().to_vec();
    let rows: Vec<&[f64]> = flat.chunks(d).collect();

    let global_mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let global_var: f64 = rows.iter().map(|r| squared_distance(r, &global_mean)).sum::<f64>() / n as f64;
    let reg = (config.reg_scale * global_var / d as f64).max(f64::MIN_POSITIVE);
    // a component holding less than this much responsibility has collapsed
    let min_weight = 1e-6 * n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assign = kmeans_assignments(&rows, k, &mut rng);
    let mut resp = vec![0.0; n * k];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * k + a] = 1.0;
    }

    let mut reseeded = vec![false; k];
    let mut components: Vec<GaussianComponent> = Vec::with_capacity(k);
    let mut history = Vec::new();
    let mut scratch = vec![0.0; d];
    let mut log_row = vec![0.0; k];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // M-step
        components.clear();
        for c in 0..k {
            let mut weight: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if weight < min_weight {
                if reseeded[c] {
                    return Err(Error::DegenerateComponent { index: c });
                }
                reseeded[c] = true;
                // move the component onto the worst-explained point
                let worst = (0..n)
                    .max_by(|&a, &b| {
                        let ra = (0..k).map(|j| resp[a * k + j]).fold(0.0, f64::max);
                        let rb = (0..k).map(|j| resp[b * k + j]).fold(0.0, f64::max);
                        rb.total_cmp(&ra).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                for j in 0..k {
                    resp[worst * k + j] = if j == c { 1.0 } else { 0.0 };
                }
                weight = 1.0;
                history.clear();
            }
            let mut mean = DVector::zeros(d);
            for (i, r) in rows.iter().enumerate() {
                let w = resp[i * k + c];
                if w != 0.0 {
                    for j in 0..d {
                        mean[j] += w * r[j];
                    }
                }
            }
            mean /= weight;
            let mut cov = DMatrix::zeros(d, d);
            for (i, r) in rows.iter().enumerate() {
                let w = resp[i * k + c];
                if w == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let da = r[a] - mean[a];
                    for b in 0..=a {
                        cov[(a, b)] += w * da * (r[b] - mean[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..a {
                    cov[(b, a)] = cov[(a, b)];
                }
            }
            cov /= weight;
            for a in 0..d {
                cov[(a, a)] += reg;
            }
            components.push(GaussianComponent {
                prior: weight / n as f64,
                mean,
                covariance: cov,
            });
        }
        let prior_sum: f64 = components.iter().map(|c| c.prior).sum();
        for c in &mut components {
            c.prior /= prior_sum;
        }

        if converged || iterations >= config.max_iter {
            break;
        }

        // E-step
        let chols = components
            .iter()
            .enumerate()
            .map(|(i, c)| cholesky_inverse(&c.covariance).ok_or(Error::DegenerateComponent { index: i }))
            .collect::<Result<Vec<_>>>()?;
        let log_priors: Vec<f64> = components.iter().map(|c| c.prior.ln()).collect();
        let mut ll = 0.0;
        for (i, r) in rows.iter().enumerate() {
            for c in 0..k {
                log_row[c] = log_priors[c] + log_gauss(r, components[c].mean.as_slice(), &chols[c], &mut scratch);
            }
            let lse = log_sum_exp(&log_row);
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = (log_row[c] - lse).exp();
            }
        }
        iterations += 1;
        let prev = history.last().copied();
        history.push(ll);
        if let Some(prev) = prev {
            // one more M-step follows so the parameters match the final responsibilities
            converged = (ll - prev).abs() <= config.tol * prev.abs().max(1e-300);
        }
    }

    Ok(MixtureFit {
        components,
        log_likelihood: history,
        iterations,
        reg,
        training_time: start.elapsed(),
    })
}

/// Posterior responsibilities of a mixture at the full-dimensional point `x`.
pub fn responsibilities(components: &[GaussianComponent], x: &DVector<f64>) -> Result<Vec<f64>> {
    let d = x.len();
    let mut scratch = vec![0.0; d];
    let logs = components
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let chol = cholesky_inverse(&c.covariance).ok_or(Error::DegenerateComponent { index: i })?;
            Ok(c.prior.ln() + log_gauss(x.as_slice(), c.mean.as_slice(), &chol, &mut scratch))
        })
        .collect::<Result<Vec<f64>>>()?;
    let lse = log_sum_exp(&logs);
    Ok(logs.iter().map(|l| (l - lse).exp()).collect())
}

/// Per-component quantities needed to condition on a 3D input.
#[derive(Debug, Clone)]
struct Conditional {
    log_weight: f64,
    mean_in: Vector3<f64>,
    mean_out: Vector3<f64>,
    precision_in: Matrix3<f64>,
    /// `Sigma_oi * Sigma_ii^-1`
    gain: Matrix3<f64>,
    cov_out: Matrix3<f64>,
}

/// Flat serialized form of a regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmrModelFile {
    pub k: usize,
    pub seed: u64,
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major 6x6 covariances.
    pub covariances: Vec<Vec<f64>>,
}

/// Mixture regression from a 3D input to a 3D output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GmrModelFile", into = "GmrModelFile")]
pub struct GmrModel {
    components: Vec<GaussianComponent>,
    seed: u64,
    conditionals: Vec<Conditional>,
}

impl TryFrom<GmrModelFile> for GmrModel {
    type Error = Error;

    fn try_from(f: GmrModelFile) -> Result<Self> {
        if f.priors.len() != f.k || f.means.len() != f.k || f.covariances.len() != f.k {
            return Err(Error::InvalidInput("model arrays disagree with k".into()));
        }
        let components = (0..f.k)
            .map(|i| {
                if f.means[i].len() != 6 || f.covariances[i].len() != 36 {
                    return Err(Error::InvalidInput(format!("component {i} has wrong dimensions")));
                }
                Ok(GaussianComponent {
                    prior: f.priors[i],
                    mean: DVector::from_column_slice(&f.means[i]),
                    covariance: DMatrix::from_row_slice(6, 6, &f.covariances[i]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GmrModel::new(components, f.seed)
    }
}

impl From<GmrModel> for GmrModelFile {
    fn from(m: GmrModel) -> Self {
        GmrModelFile {
            k: m.components.len(),
            seed: m.seed,
            priors: m.components.iter().map(|c| c.prior).collect(),
            means: m.components.iter().map(|c| c.mean.as_slice().to_vec()).collect(),
            covariances: m
                .components
                .iter()
                .map(|c| c.covariance.transpose().as_slice().to_vec())
                .collect(),
        }
    }
}

impl GmrModel {
    /// Builds a regressor from 6-dimensional joint components, the first
    /// three coordinates being the input.
    pub fn new(components: Vec<GaussianComponent>, seed: u64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("regression model needs k >= 1".into()));
        }
        let prior_sum: f64 = components.iter().map(|c| c.prior).sum();
        if (prior_sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("priors sum to {prior_sum}")));
        }
        let conditionals = components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.mean.len() != 6 || c.covariance.shape() != (6, 6) {
                    return Err(Error::InvalidInput(format!("component {i} is not 6-dimensional")));
                }
                if !(c.prior > 0.0 && c.prior <= 1.0) {
                    return Err(Error::InvalidInput(format!("component {i} prior {}", c.prior)));
                }
                let s = &c.covariance;
                let s_ii: Matrix3<f64> = s.fixed_view::<3, 3>(0, 0).into_owned();
                let s_oi: Matrix3<f64> = s.fixed_view::<3, 3>(3, 0).into_owned();
                let s_oo: Matrix3<f64> = s.fixed_view::<3, 3>(3, 3).into_owned();
                let chol = s_ii.cholesky().ok_or(Error::DegenerateComponent { index: i })?;
                let precision_in = chol.inverse();
                let log_det = 2.0 * (0..3).map(|j| chol.l()[(j, j)].ln()).sum::<f64>();
                let gain = s_oi * precision_in;
                Ok(Conditional {
                    log_weight: c.prior.ln() - 0.5 * (3.0 * LN_2PI + log_det),
                    mean_in: c.mean.fixed_rows::<3>(0).into_owned(),
                    mean_out: c.mean.fixed_rows::<3>(3).into_owned(),
                    precision_in,
                    gain,
                    cov_out: s_oo - gain * s_oi.transpose(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            seed,
            conditionals,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Mixing weights of the input marginals at `input`.
    pub fn input_responsibilities(&self, input: &Vector3<f64>) -> Vec<f64> {
        let logs: Vec<f64> = self
            .conditionals
            .iter()
            .map(|c| {
                let d = input - c.mean_in;
                c.log_weight - 0.5 * d.dot(&(c.precision_in * d))
            })
            .collect();
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    fn conditional_mean(c: &Conditional, input: &Vector3<f64>) -> Vector3<f64> {
        c.mean_out + c.gain * (input - c.mean_in)
    }

    /// Conditional expectation of the output and its covariance.
    pub fn predict(&self, input: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let h = self.input_responsibilities(input);
        let means: Vec<Vector3<f64>> = self.conditionals.iter().map(|c| Self::conditional_mean(c, input)).collect();
        let mean: Vector3<f64> = h.iter().zip(&means).map(|(w, m)| *w * m).sum();
        let mut cov = Matrix3::zeros();
        for ((w, m), c) in h.iter().zip(&means).zip(&self.conditionals) {
            let dm = m - mean;
            cov += *w * (c.cov_out + dm * dm.transpose());
        }
        (mean, cov)
    }

    pub fn predict_mean(&self, input: &Vector3<f64>) -> Vector3<f64> {
        self.predict(input).0
    }

    /// Spectral norm of the analytic Jacobian of the regression mean at
    /// `input`; bounds the local Lipschitz constant.
    pub fn local_lipschitz(&self, input: &Vector3<f64>) -> f64 {
        let h = self.input_responsibilities(input);
        let means: Vec<Vector3<f64>> = self.conditionals.iter().map(|c| Self::conditional_mean(c, input)).collect();
        let grads: Vec<Vector3<f64>> = self
            .conditionals
            .iter()
            .map(|c| -(c.precision_in * (input - c.mean_in)))
            .collect();
        let mean_grad: Vector3<f64> = h.iter().zip(&grads).map(|(w, g)| *w * g).sum();
        let mut jac = Matrix3::zeros();
        for i in 0..h.len() {
            jac += h[i] * (self.conditionals[i].gain + means[i] * (grads[i] - mean_grad).transpose());
        }
        jac.norm()
    }
}

/// Regression model together with its EM diagnostics.
#[derive(Debug, Clone)]
pub struct GmrFit {
    pub model: GmrModel,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub training_time: Duration,
}

/// Fits the joint `(input, output)` mixture of a training set.
pub fn fit_gmm(training: &TrainingSet, k: usize, seed: u64, config: &EmConfig) -> Result<GmrFit> {
    let start = Instant::now();
    if training.len() < k || k == 0 {
        return Err(Error::InvalidInput(format!(
            "{} training pairs cannot support {k} components",
            training.len()
        )));
    }
    let data = DMatrix::from_fn(training.len(), 6, |r, c| {
        let p = &training.pairs[r];
        if c < 3 {
            p.input[c]
        } else {
            p.output[c - 3]
        }
    });
    let fit = fit_mixture(&data, k, seed, config)?;
    let model = GmrModel::new(fit.components, seed)?;
    Ok(GmrFit {
        model,
        log_likelihood: fit.log_likelihood,
        iterations: fit.iterations,
        training_time: start.elapsed(),
    })
}
