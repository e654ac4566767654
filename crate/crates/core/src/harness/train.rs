//! Training stage: one learned artifact per (method, k, class).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::data::ClassData;
use crate::clf::{learn_clf, ClfArtifact, ClfDmController};
use crate::dataset::{build_clf_training, build_fdm_training, build_rds_training};
use crate::error::{Error, Result};
use crate::fdm::{fast_diffeo_match, DiffeoMap, FdmController};
use crate::gmr::{fit_gmm, GmrModel};
use crate::rds::RdsController;
use crate::vision::{BaselineController, Controller, Scene};

/// The learned parameters of one method. Runtime settings such as the
/// clock or the Jacobian mode come from the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ModelArtifact {
    Baseline,
    Rds {
        reshaping: GmrModel,
    },
    Clfdm {
        flow: GmrModel,
        lyapunov: ClfArtifact,
        violation_fraction: f64,
    },
    Fdm {
        map: DiffeoMap,
        eps1_norm: f64,
        residuals: Vec<f64>,
    },
}

impl ModelArtifact {
    pub fn controller(&self, config: &ExperimentConfig) -> Result<Box<dyn Controller + Send + Sync>> {
        Ok(match self {
            ModelArtifact::Baseline => Box::new(BaselineController {
                lambda: config.lambda,
                interaction: config.baseline.interaction,
            }),
            ModelArtifact::Rds { reshaping } => {
                Box::new(RdsController::new(reshaping.clone(), config.lambda, config.rds.clock)?)
            }
            ModelArtifact::Clfdm { flow, lyapunov, .. } => {
                let ctrl = ClfDmController::new(
                    flow.clone(),
                    lyapunov.clf.clone(),
                    lyapunov.rho0,
                    lyapunov.rate,
                    config.lambda,
                )?;
                match config.clfdm.step_limit {
                    Some(ratio) => Box::new(ctrl.with_step_limit(config.period, ratio)?),
                    None => Box::new(ctrl),
                }
            }
            ModelArtifact::Fdm { map, eps1_norm, .. } => Box::new(FdmController::new(
                map.clone(),
                *eps1_norm,
                config.samples,
                config.period,
                config.fdm.jacobian_at,
            )?),
        })
    }
}

/// Outcome of training one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub class: String,
    pub method: Method,
    pub k: usize,
    pub artifact: Option<ModelArtifact>,
    /// Training error, if the fit failed.
    pub failure: Option<String>,
    pub training_time_ms: f64,
}

fn class_seed(seed: u64, class_index: usize) -> u64 {
    seed.wrapping_add((class_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn fit(config: &ExperimentConfig, scene: &Scene, class: &ClassData, seed: u64, method: Method, k: usize) -> Result<(ModelArtifact, Duration)> {
    let pinv = &scene.target_pinv;
    match method {
        Method::Baseline => Ok((ModelArtifact::Baseline, Duration::ZERO)),
        Method::Rds => {
            let training = build_rds_training(&class.demos, config.lambda, pinv);
            let fit = fit_gmm(&training, k, seed, &config.rds.em)?;
            Ok((ModelArtifact::Rds { reshaping: fit.model }, fit.training_time))
        }
        Method::Clfdm => {
            let training = build_clf_training(&class.demos, pinv);
            let flow = fit_gmm(&training, k, seed, &config.clfdm.em)?;
            let clf = learn_clf(&training, seed, &config.clfdm.fit)?;
            let lyapunov = ClfArtifact {
                num_components: clf.model.num_components(),
                clf: clf.model,
                rho0: config.clfdm.rho0,
                rate: config.clfdm.rate,
            };
            Ok((
                ModelArtifact::Clfdm {
                    flow: flow.model,
                    lyapunov,
                    violation_fraction: clf.violation_fraction,
                },
                flow.training_time + clf.training_time,
            ))
        }
        Method::Fdm => {
            let training = build_fdm_training(&class.demos, pinv)?;
            let fit = fast_diffeo_match(&training, k, &config.fdm.matching)?;
            let time = fit.training_time;
            Ok((
                ModelArtifact::Fdm {
                    map: fit.map,
                    eps1_norm: training.eps1.norm(),
                    residuals: fit.residuals,
                },
                time,
            ))
        }
    }
}

/// Fits one class. Errors are recorded in the result rather than returned.
pub fn train_class(config: &ExperimentConfig, scene: &Scene, class: &ClassData, class_index: usize, method: Method, k: usize) -> TrainedModel {
    let seed = class_seed(config.seed, class_index);
    let (artifact, failure, time) = match fit(config, scene, class, seed, method, k) {
        Ok((a, t)) => (Some(a), None, t),
        Err(e) => (None, Some(e.to_string()), Duration::ZERO),
    };
    TrainedModel {
        class: class.name.clone(),
        method,
        k,
        artifact,
        failure,
        training_time_ms: time.as_secs_f64() * 1e3,
    }
}

pub fn train_all(config: &ExperimentConfig, scene: &Scene, classes: &[ClassData], method: Method, k: usize) -> Vec<TrainedModel> {
    classes
        .iter()
        .enumerate()
        .map(|(i, c)| train_class(config, scene, c, i, method, k))
        .collect()
}

pub fn model_dir(out_dir: &Path, method: Method, k: usize) -> PathBuf {
    out_dir.join("models").join(format!("{method}_k{k}"))
}

pub fn write_models(out_dir: &Path, models: &[TrainedModel]) -> Result<()> {
    for m in models {
        let dir = model_dir(out_dir, m.method, m.k);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{}.json", m.class));
        let text = serde_json::to_string_pretty(m).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Loads the models for `classes` in the given order.
pub fn read_models(out_dir: &Path, method: Method, k: usize, classes: &[ClassData]) -> Result<Vec<TrainedModel>> {
    let dir = model_dir(out_dir, method, k);
    classes
        .iter()
        .map(|c| {
            let path = dir.join(format!("{}.json", c.name));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
        })
        .collect()
}
