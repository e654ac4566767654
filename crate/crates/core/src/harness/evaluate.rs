//! Evaluation stage: closed-loop runs, reproduction metrics and reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::data::ClassData;
use super::train::TrainedModel;
use crate::dataset::Demonstration;
use crate::error::{Error, Result};
use crate::vision::{simulate, Controller, Scene, StepRecord, Trajectory, Vec3, FEATURE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Demo,
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// Reached the step limit without converging.
    Unfinished,
    Diverged,
    /// The camera crossed the target plane.
    LostTarget,
    Failed,
}

/// Reproduction errors against the reference demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Millimeters.
    pub p_rms: f64,
    /// Millimeters per second.
    pub v_rms: f64,
    /// Pixel equivalents.
    pub s_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub kind: StartKind,
    pub index: usize,
    /// Demonstration the run is compared against.
    pub reference: usize,
    pub start: [f64; 3],
    pub status: RunStatus,
    pub steps: usize,
    pub final_error: Option<f64>,
    pub fallback_steps: usize,
    pub metrics: Option<RunMetrics>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEvaluation {
    pub class: String,
    pub training_time_ms: f64,
    pub training_failure: Option<String>,
    pub runs: Vec<RunResult>,
    /// Mean over the demo-start runs that produced metrics.
    pub metrics: Option<RunMetrics>,
}

impl ClassEvaluation {
    pub fn converged(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Converged).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub p_rms: Option<Stat>,
    pub v_rms: Option<Stat>,
    pub s_rms: Option<Stat>,
    pub tau_ms: Option<Stat>,
    pub runs: usize,
    pub converged: usize,
    pub diverged: usize,
    pub failed_classes: usize,
}

/// All results of one (method, k) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub k: usize,
    pub summary: Summary,
    pub classes: Vec<ClassEvaluation>,
    pub config: ExperimentConfig,
}

const TIMING_KEYS: [&str; 2] = ["training_time_ms", "tau_ms"];

fn strip_keys(value: &mut serde_json::Value, keys: &[&str]) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !keys.contains(&k.as_str()));
            map.values_mut().for_each(|v| strip_keys(v, keys));
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|v| strip_keys(v, keys)),
        _ => {}
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// The report without wall-clock timings; identical for identical
    /// configurations.
    pub fn deterministic_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("reports serialize");
        strip_keys(&mut value, &TIMING_KEYS);
        serde_json::to_string_pretty(&value).expect("reports serialize")
    }
}

/// Compares a closed-loop run against a demonstration over the
/// demonstration's length, holding the final state of a run that ended
/// early.
pub fn reproduction_metrics(traj: &Trajectory, demo: &Demonstration, pixels_per_unit: f64) -> RunMetrics {
    let n = demo.len();
    let mut sums = [0.0; 3];
    for (i, d) in demo.samples.iter().enumerate() {
        let r = &traj.records[i.min(traj.records.len() - 1)];
        sums[0] += (r.position - d.position).norm_squared();
        sums[1] += (r.velocity - d.velocity).norm_squared();
        sums[2] += (r.features - d.features).norm_squared();
    }
    let rms = |s: f64| (s / n as f64).sqrt();
    RunMetrics {
        p_rms: rms(sums[0]) * 1e3,
        v_rms: rms(sums[1]) * 1e3,
        s_rms: rms(sums[2]) * pixels_per_unit,
    }
}

/// Perturbed starts: demo starts displaced uniformly inside a ball.
pub fn unseen_starts(class: &ClassData, count: usize, radius: f64, seed: u64) -> Vec<(usize, Vec3)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let reference = i % class.demos.len();
            let offset = loop {
                let u = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if u.norm_squared() <= 1.0 {
                    break u * radius;
                }
            };
            (reference, class.demos[reference].samples[0].position + offset)
        })
        .collect()
}

fn class_seed(config: &ExperimentConfig, class_index: usize) -> u64 {
    config.seed ^ 0x5eed_0000_0000_0000 ^ class_index as u64
}

/// One closed-loop run together with its trajectory, if it finished.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub trajectory: Option<Trajectory>,
}

fn run_one<C: Controller + ?Sized>(
    controller: &C,
    scene: &Scene,
    config: &ExperimentConfig,
    demo: &Demonstration,
    kind: StartKind,
    index: usize,
    start: Vec3,
) -> RunOutput {
    let mut result = RunResult {
        kind,
        index,
        reference: demo.index,
        start: start.into(),
        status: RunStatus::Failed,
        steps: 0,
        final_error: None,
        fallback_steps: 0,
        metrics: None,
        message: None,
    };
    match simulate(controller, scene.camera_at(start), scene, &config.sim) {
        Ok(traj) => {
            result.status = if traj.converged {
                RunStatus::Converged
            } else {
                RunStatus::Unfinished
            };
            result.steps = traj.steps();
            result.final_error = Some(traj.last().error.norm());
            result.fallback_steps = traj.records.iter().filter(|r| r.fallback).count();
            result.metrics = Some(reproduction_metrics(&traj, demo, config.evaluation.pixels_per_unit));
            RunOutput {
                result,
                trajectory: Some(traj),
            }
        }
        Err(e) => {
            result.status = match e {
                Error::Diverged { step, .. } => {
                    result.steps = step;
                    RunStatus::Diverged
                }
                Error::NonPositiveDepth { .. } => RunStatus::LostTarget,
                _ => RunStatus::Failed,
            };
            result.message = Some(e.to_string());
            RunOutput {
                result,
                trajectory: None,
            }
        }
    }
}

/// Simulates every start of one class.
pub fn evaluate_class(
    config: &ExperimentConfig,
    scene: &Scene,
    class: &ClassData,
    class_index: usize,
    model: &TrainedModel,
) -> (ClassEvaluation, Vec<RunOutput>) {
    let mut eval = ClassEvaluation {
        class: class.name.clone(),
        training_time_ms: model.training_time_ms,
        training_failure: model.failure.clone(),
        runs: Vec::new(),
        metrics: None,
    };
    let controller = match model.artifact.as_ref().map(|a| a.controller(config)) {
        Some(Ok(c)) => c,
        Some(Err(e)) => {
            eval.training_failure = Some(e.to_string());
            return (eval, Vec::new());
        }
        None => return (eval, Vec::new()),
    };
    let mut outputs = Vec::new();
    for (i, demo) in class.demos.iter().enumerate() {
        let start = demo.samples[0].position;
        outputs.push(run_one(&*controller, scene, config, demo, StartKind::Demo, i, start));
    }
    let radius = config.evaluation.unseen_radius_fraction * class.mean_path_length();
    let starts = unseen_starts(class, config.evaluation.unseen_per_class, radius, class_seed(config, class_index));
    for (i, (reference, start)) in starts.into_iter().enumerate() {
        outputs.push(run_one(&*controller, scene, config, &class.demos[reference], StartKind::Unseen, i, start));
    }
    eval.runs = outputs.iter().map(|o| o.result.clone()).collect();
    let demo_metrics: Vec<RunMetrics> = eval
        .runs
        .iter()
        .filter(|r| r.kind == StartKind::Demo)
        .filter_map(|r| r.metrics)
        .collect();
    if !demo_metrics.is_empty() {
        let n = demo_metrics.len() as f64;
        eval.metrics = Some(RunMetrics {
            p_rms: demo_metrics.iter().map(|m| m.p_rms).sum::<f64>() / n,
            v_rms: demo_metrics.iter().map(|m| m.v_rms).sum::<f64>() / n,
            s_rms: demo_metrics.iter().map(|m| m.s_rms).sum::<f64>() / n,
        });
    }
    (eval, outputs)
}

pub fn summarize(classes: &[ClassEvaluation]) -> Summary {
    let metric = |f: fn(&RunMetrics) -> f64| {
        let v: Vec<f64> = classes.iter().filter_map(|c| c.metrics.as_ref().map(f)).collect();
        Stat::of(&v)
    };
    let taus: Vec<f64> = classes
        .iter()
        .filter(|c| c.training_failure.is_none())
        .map(|c| c.training_time_ms)
        .collect();
    Summary {
        p_rms: metric(|m| m.p_rms),
        v_rms: metric(|m| m.v_rms),
        s_rms: metric(|m| m.s_rms),
        tau_ms: Stat::of(&taus),
        runs: classes.iter().map(|c| c.runs.len()).sum(),
        converged: classes.iter().map(|c| c.converged()).sum(),
        diverged: classes
            .iter()
            .flat_map(|c| &c.runs)
            .filter(|r| r.status == RunStatus::Diverged)
            .count(),
        failed_classes: classes.iter().filter(|c| c.training_failure.is_some()).count(),
    }
}

/// Evaluates trained models, one per class in the same order as `classes`.
pub fn evaluate(
    config: &ExperimentConfig,
    scene: &Scene,
    classes: &[ClassData],
    models: &[TrainedModel],
) -> Result<(RunReport, Vec<Vec<RunOutput>>)> {
    if classes.len() != models.len() {
        return Err(Error::UnequalLengths {
            expected: classes.len(),
            found: models.len(),
        });
    }
    let (method, k) = models
        .first()
        .map(|m| (m.method, m.k))
        .ok_or_else(|| Error::InvalidInput("no models to evaluate".into()))?;
    let mut evals = Vec::new();
    let mut outputs = Vec::new();
    for (i, (class, model)) in classes.iter().zip(models).enumerate() {
        if model.class != class.name || model.method != method || model.k != k {
            return Err(Error::InvalidInput(format!(
                "model for {}/{}/k{} does not match class {}",
                model.class, model.method, model.k, class.name
            )));
        }
        let (e, o) = evaluate_class(config, scene, class, i, model);
        evals.push(e);
        outputs.push(o);
    }
    Ok((
        RunReport {
            method,
            k,
            summary: summarize(&evals),
            classes: evals,
            config: config.clone(),
        },
        outputs,
    ))
}

pub const TRAJECTORY_HEADER: &str = "step,t,px,py,pz,s1,s2,s3,s4,s5,s6,s7,s8,e1,e2,e3,e4,e5,e6,e7,e8,vx,vy,vz,h,V,gamma";

fn optional(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn trajectory_csv(records: &[StepRecord]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{:?},{:?},{:?},{:?}", r.step, r.time, r.position.x, r.position.y, r.position.z);
        for v in r.features.iter().chain(r.error.iter()).chain(r.velocity.iter()) {
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(out, ",{},{},{}", optional(r.clock), optional(r.lyapunov), optional(r.gamma));
    }
    debug_assert_eq!(TRAJECTORY_HEADER.split(',').count(), 5 + 2 * FEATURE_DIM + 6);
    out
}

pub fn report_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("reports")
}

/// Writes `reports/<method>_k<k>.json` and, if enabled, one trajectory CSV
/// per finished run.
pub fn write_report(out_dir: &Path, report: &RunReport, outputs: &[Vec<RunOutput>]) -> Result<PathBuf> {
    let dir = report_dir(out_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let tag = format!("{}_k{}", report.method, report.k);
    let path = dir.join(format!("{tag}.json"));
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    if report.config.evaluation.write_trajectories {
        let tdir = out_dir.join("trajectories").join(&tag);
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        for (class, runs) in report.classes.iter().zip(outputs) {
            for run in runs {
                if let Some(traj) = &run.trajectory {
                    let kind = match run.result.kind {
                        StartKind::Demo => "demo",
                        StartKind::Unseen => "unseen",
                    };
                    let p = tdir.join(format!("{}_{kind}_{}.csv", class.class, run.result.index));
                    fs::write(&p, trajectory_csv(&traj.records)).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }
    Ok(path)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
