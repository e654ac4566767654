//! End-to-end acceptance checks.
//!
//! Runs as a plain binary so that every criterion prints its verdict line,
//! passing or not. The process exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsvs::dataset::{build_fdm_training, TrainingKind, TrainingPair, TrainingSet};
use dsvs::fdm::{fast_diffeo_match, DiffeoFit};
use dsvs::gmr::{fit_gmm, EmConfig};
use dsvs::harness::{build_classes, evaluate, train_all, ClassData, ExperimentConfig, Method, ModelArtifact, RunReport, TrainedModel};
use dsvs::rds::{ClockSignal, RdsController};
use dsvs::vision::{simulate, BaselineController, Scene, SimConfig, Vec3};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Setup {
    config: ExperimentConfig,
    scene: Scene,
    classes: Vec<ClassData>,
}

fn setup() -> Setup {
    let config = ExperimentConfig::default();
    let scene = config.scene.build().unwrap();
    let classes = build_classes(&config, &scene).unwrap();
    assert_eq!(classes.len(), 3);
    assert!(classes.iter().all(|c| c.demos.len() == 3 && c.demos.iter().all(|d| d.len() == 100)));
    Setup { config, scene, classes }
}

fn reproduction_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.rds.clock = ClockSignal::AlwaysOn;
    config
}

fn baseline_convergence() -> Verdict {
    let scene = ExperimentConfig::default().scene.build().unwrap();
    let sim = SimConfig::default();
    let controller = BaselineController::true_interaction(1.0);
    let center = scene.target.position + Vec3::new(0.0, 0.0, -0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Instant::now();
    let (mut converged, mut monotone) = (0, 0);
    for _ in 0..100 {
        let offset = Vec3::from_fn(|_, _| rng.random_range(-0.15..=0.15));
        let traj = simulate(&controller, scene.camera_at(center + offset), &scene, &sim).unwrap();
        converged += usize::from(traj.converged);
        let norms: Vec<f64> = traj.error_norms().collect();
        monotone += usize::from(norms.windows(2).all(|w| w[1] < w[0]));
    }
    let elapsed = start.elapsed();
    Verdict::new(
        converged == 100 && monotone == 100 && elapsed < Duration::from_secs(5),
        format!("{converged}/100 converged, {monotone}/100 strictly decreasing, {elapsed:.2?}"),
    )
}

fn rds_reproduction(s: &Setup) -> (Verdict, RunReport) {
    let config = reproduction_config();
    let start = Instant::now();
    let models = train_all(&config, &s.scene, &s.classes, Method::Rds, 11);
    let (report, _) = evaluate(&config, &s.scene, &s.classes, &models).unwrap();
    let elapsed = start.elapsed();
    let n = s.classes.len() as f64;
    let path_mm = 1e3 * s.classes.iter().map(|c| c.mean_path_length()).sum::<f64>() / n;
    let excursion_px = config.evaluation.pixels_per_unit * s.classes.iter().map(|c| c.mean_feature_excursion()).sum::<f64>() / n;
    let p = report.summary.p_rms.map_or(f64::INFINITY, |s| s.mean);
    let px = report.summary.s_rms.map_or(f64::INFINITY, |s| s.mean);
    let verdict = Verdict::new(
        p <= 0.05 * path_mm && px <= 0.05 * excursion_px && elapsed < Duration::from_secs(60),
        format!(
            "p_rms {p:.2} mm (limit {:.2}), s_rms {px:.2} px (limit {:.2}), {elapsed:.2?}",
            0.05 * path_mm,
            0.05 * excursion_px
        ),
    );
    (verdict, report)
}

fn clf_stability(s: &Setup) -> (Verdict, RunReport) {
    let config = &s.config;
    let models = train_all(config, &s.scene, &s.classes, Method::Clfdm, 11);
    let (report, outputs) = evaluate(config, &s.scene, &s.classes, &models).unwrap();
    let mut worst_violation = 0.0_f64;
    let mut bad_steps = 0;
    let mut checked_steps = 0;
    let mut failed = Vec::new();
    for (model, runs) in models.iter().zip(&outputs) {
        let Some(ModelArtifact::Clfdm {
            lyapunov,
            violation_fraction,
            ..
        }) = &model.artifact
        else {
            failed.push(format!("{}: {}", model.class, model.failure.clone().unwrap_or_default()));
            continue;
        };
        assert_eq!(lyapunov.num_components, 2);
        worst_violation = worst_violation.max(*violation_fraction);
        for run in runs {
            let Some(traj) = &run.trajectory else { continue };
            for w in traj.records.windows(2) {
                let (prev, next) = (&w[0], &w[1]);
                if prev.error.norm() <= config.sim.convergence_tol || prev.fallback {
                    continue;
                }
                let (Some(v0), Some(v1)) = (prev.lyapunov, next.lyapunov) else { continue };
                checked_steps += 1;
                let rho = lyapunov.rate.eval(lyapunov.rho0, prev.epsilon.norm());
                if !(v1 < v0 + 2.0 * rho * config.period) {
                    bad_steps += 1;
                }
            }
        }
    }
    let summary = &report.summary;
    let verdict = Verdict::new(
        failed.is_empty() && worst_violation < 0.05 && bad_steps == 0 && summary.converged == summary.runs,
        format!(
            "violation fraction max {worst_violation:.3}, V increase beyond slack on {bad_steps}/{checked_steps} steps, \
             {}/{} runs converged{}",
            summary.converged,
            summary.runs,
            if failed.is_empty() { String::new() } else { format!(", training failed: {failed:?}") }
        ),
    );
    (verdict, report)
}

fn per_class_time(models: &[TrainedModel]) -> Vec<f64> {
    models.iter().map(|m| m.training_time_ms).collect()
}

fn orderings(s: &Setup) -> (Verdict, Vec<String>) {
    let config = reproduction_config();
    let rds7 = train_all(&config, &s.scene, &s.classes, Method::Rds, 7);
    let rds11 = train_all(&config, &s.scene, &s.classes, Method::Rds, 11);
    let clf11 = train_all(&config, &s.scene, &s.classes, Method::Clfdm, 11);
    let fdm150 = train_all(&config, &s.scene, &s.classes, Method::Fdm, 150);
    let (t_fdm, t_rds, t_clf) = (per_class_time(&fdm150), per_class_time(&rds11), per_class_time(&clf11));
    let timing_ok = (0..s.classes.len()).filter(|&i| t_fdm[i] < t_rds[i] && t_rds[i] < t_clf[i]).count();
    let (r7, _) = evaluate(&config, &s.scene, &s.classes, &rds7).unwrap();
    let (r11, _) = evaluate(&config, &s.scene, &s.classes, &rds11).unwrap();
    let p = |r: &RunReport, i: usize| r.classes[i].metrics.map_or(f64::INFINITY, |m| m.p_rms);
    let accuracy_ok = (0..s.classes.len()).filter(|&i| p(&r11, i) <= p(&r7, i)).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/");
    let verdict = Verdict::new(
        timing_ok >= 2 && accuracy_ok >= 2,
        format!(
            "tau fdm {} < rds {} < clfdm {} ms on {timing_ok}/3 classes; p_rms k11 <= k7 on {accuracy_ok}/3 classes",
            fmt(&t_fdm),
            fmt(&t_rds),
            fmt(&t_clf)
        ),
    );
    let mut artifacts: Vec<String> = [&rds7, &rds11, &clf11, &fdm150]
        .iter()
        .flat_map(|models| models.iter())
        .map(|m| serde_json::to_string(&m.artifact).unwrap())
        .collect();
    artifacts.push(r7.deterministic_json());
    artifacts.push(r11.deterministic_json());
    (verdict, artifacts)
}

fn relative_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn fdm_correctness(s: &Setup) -> (Verdict, Vec<DiffeoFit>) {
    let config = &s.config;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_round_trip, mut worst_jacobian) = (0.0_f64, 0.0_f64);
    let mut monotone = true;
    let mut slowest = Duration::ZERO;
    let mut fits = Vec::new();
    for class in &s.classes {
        let training = build_fdm_training(&class.demos, &s.scene.target_pinv).unwrap();
        let start = Instant::now();
        let fit = fast_diffeo_match(&training, 150, &config.fdm.matching).unwrap();
        slowest = slowest.max(start.elapsed());
        monotone &= fit.residuals.windows(2).all(|w| w[1] <= w[0]);

        let points = training.averaged();
        let lo = points.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = points.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        let margin = 0.25 * (hi - lo).max();
        for _ in 0..1000 {
            let z = Vec3::from_fn(|i, _| rng.random_range(lo[i] - margin..=hi[i] + margin));
            let back = fit.map.inverse(&fit.map.apply(&z)).unwrap();
            worst_round_trip = worst_round_trip.max((back - z).norm());

            let h = 1e-6;
            let fd = Matrix3::from_fn(|r, c| {
                let dz = Vec3::ith(c, h);
                (fit.map.apply(&(z + dz))[r] - fit.map.apply(&(z - dz))[r]) / (2.0 * h)
            });
            worst_jacobian = worst_jacobian.max(relative_error(&fd, &fit.map.jacobian(&z)));
        }
        fits.push(fit);
    }
    let verdict = Verdict::new(
        worst_round_trip < 1e-9 && worst_jacobian < 1e-6 && monotone && slowest < Duration::from_secs(10),
        format!(
            "round trip {worst_round_trip:.2e}, jacobian rel err {worst_jacobian:.2e}, residual monotone {monotone}, \
             slowest fit {slowest:.2?}"
        ),
    );
    (verdict, fits)
}

fn gmr_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix3::new(0.8, -0.3, 0.1, 0.2, 0.5, -0.4, -0.1, 0.3, 0.9);
    let pairs: Vec<TrainingPair> = (0..2000)
        .map(|_| {
            let input = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let noise = Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            TrainingPair {
                input,
                output: a * input + Vec3::new(0.1, -0.2, 0.05) + noise + 0.3 * Vec3::new(input.x * input.y, 0.0, input.z * input.z),
            }
        })
        .collect();
    let training = TrainingSet {
        kind: TrainingKind::Clf,
        pairs,
    };
    // no covariance floor, so the fit is exactly the maximum-likelihood moments
    let em = EmConfig {
        reg_scale: 0.0,
        ..EmConfig::default()
    };
    let model = fit_gmm(&training, 1, 0, &em).unwrap().model;

    let n = training.len() as f64;
    let rows: Vec<DVector<f64>> = training
        .pairs
        .iter()
        .map(|p| DVector::from_iterator(6, p.input.iter().chain(p.output.iter()).copied()))
        .collect();
    let mean = rows.iter().fold(DVector::zeros(6), |acc, r| acc + r) / n;
    let cov = rows.iter().fold(DMatrix::zeros(6, 6), |acc, r| acc + (r - &mean) * (r - &mean).transpose()) / n;
    let sxx = cov.view((0, 0), (3, 3)).into_owned();
    let syx = cov.view((3, 0), (3, 3)).into_owned();
    let gain = syx * sxx.try_inverse().unwrap();

    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let x = Vec3::from_fn(|_, _| rng.random_range(-1.5..1.5));
        let dx = DVector::from_column_slice((x - Vec3::new(mean[0], mean[1], mean[2])).as_slice());
        let oracle = mean.rows(3, 3) + &gain * dx;
        let got = model.predict_mean(&x);
        worst = worst.max((0..3).map(|i| (got[i] - oracle[i]).abs()).fold(0.0, f64::max));
    }
    Verdict::new(worst < 1e-8, format!("max abs error {worst:.2e} over 1000 queries"))
}

fn clock_handover() -> Verdict {
    let config = ExperimentConfig::default();
    let scene = config.scene.build().unwrap();
    // reshaping u = 3 eps gives v = 2 eps while the clock is on
    let pairs: Vec<TrainingPair> = (0..400)
        .map(|i| {
            let t = i as f64 * 0.173;
            let input = 0.2 * Vec3::new(t.sin(), (1.7 * t).cos(), (0.6 * t).sin());
            TrainingPair {
                input,
                output: 3.0 * input,
            }
        })
        .collect();
    let training = TrainingSet {
        kind: TrainingKind::Rds,
        pairs,
    };
    let model = fit_gmm(&training, 1, 0, &EmConfig::default()).unwrap().model;
    let clock = ClockSignal::hold_then_decay(0.5, 0.1).unwrap();
    let controller = RdsController::new(model, 1.0, clock).unwrap();
    let init = scene.camera_at(scene.target.position + Vec3::new(0.02, -0.015, -0.03));
    let traj = simulate(&controller, init, &scene, &config.sim).unwrap();

    let eps: Vec<f64> = traj.records.iter().map(|r| r.epsilon.norm()).collect();
    let pushed_away = eps.iter().copied().fold(0.0, f64::max) > 1.5 * eps[0];
    let off = traj.records.iter().position(|r| clock.value(r.time) < 1e-9);
    let tail = &eps[eps.len().saturating_sub(51)..];
    let expected = 1.0 - config.lambda * config.period;
    let worst = tail
        .windows(2)
        .map(|w| ((w[1] / w[0]) / expected - 1.0).abs())
        .fold(0.0, f64::max);
    let tail_after_clock = off.is_some_and(|i| i <= eps.len() - tail.len());
    Verdict::new(
        traj.converged && pushed_away && tail_after_clock && tail.len() == 51 && worst < 0.01,
        format!(
            "converged {} after {} steps, pushed away {pushed_away}, worst ratio deviation {worst:.2e} over the final 50 steps",
            traj.converged,
            traj.steps()
        ),
    )
}

/// Everything criteria 2 to 5 produce, in comparable form.
fn reproducible_outputs() -> Vec<String> {
    let s = setup();
    let mut out = vec![rds_reproduction(&s).1.deterministic_json(), clf_stability(&s).1.deterministic_json()];
    out.extend(orderings(&s).1);
    out.extend(fdm_correctness(&s).1.iter().map(|f| {
        serde_json::to_string(&(&f.map, &f.residuals)).unwrap()
    }));
    out
}

fn determinism() -> Verdict {
    let first = reproducible_outputs();
    let second = reproducible_outputs();
    let differing = first.iter().zip(&second).filter(|(a, b)| a != b).count();
    Verdict::new(
        first.len() == second.len() && differing == 0,
        format!("{} artifacts compared, {differing} differ", first.len()),
    )
}

fn main() -> ExitCode {
    let s = setup();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("1 baseline convergence", Box::new(baseline_convergence)),
        ("2 rds reproduction", Box::new(|| rds_reproduction(&s).0)),
        ("3 clf-dm stability", Box::new(|| clf_stability(&s).0)),
        ("4 method orderings", Box::new(|| orderings(&s).0)),
        ("5 fdm map correctness", Box::new(|| fdm_correctness(&s).0)),
        ("6 gmr oracle", Box::new(gmr_oracle)),
        ("7 clock handover", Box::new(clock_handover)),
        ("8 determinism", Box::new(determinism)),
    ];
    let mut failures = 0;
    for (name, check) in &criteria {
        let v = check();
        failures += usize::from(!v.pass);
        println!("criterion {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
