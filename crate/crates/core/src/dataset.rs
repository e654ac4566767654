//! Demonstrations: planar ingestion, augmentation into camera and feature
//! space, resampling, and the per-method training sets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vision::{
    vs_baseline, CartesianError, Features, PseudoInverseMatrix, Scene, Vec3, Velocity,
    VisualError, FEATURE_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// A 2D demonstration, meters and seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarTrajectory {
    samples: Vec<PlanarSample>,
}

impl PlanarTrajectory {
    /// Builds a trajectory from `(t, x, y)` triples, deriving velocities by
    /// central differences (one-sided at the ends).
    pub fn from_positions(points: &[(f64, f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooShort { len: points.len() });
        }
        if let Some(w) = points.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidInput(format!(
                "timestamps must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        let n = points.len();
        let samples = (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                let dt = points[b].0 - points[a].0;
                PlanarSample {
                    t: points[i].0,
                    x: points[i].1,
                    y: points[i].2,
                    vx: (points[b].1 - points[a].1) / dt,
                    vy: (points[b].2 - points[a].2) / dt,
                }
            })
            .collect();
        Ok(Self { samples })
    }

    pub fn from_samples(samples: Vec<PlanarSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooShort { len: samples.len() });
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidInput("timestamps must increase strictly".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PlanarSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

/// Reads the `t,x,y[,vx,vy]` block format: one block per demonstration,
/// blocks separated by blank lines, header lines allowed at block starts.
pub fn load_planar_trajectories(path: &Path) -> Result<Vec<PlanarTrajectory>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_planar_trajectories(&text, path)
}

fn parse_planar_trajectories(text: &str, path: &Path) -> Result<Vec<PlanarTrajectory>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut blocks: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    let mut current: Option<(usize, Vec<Vec<f64>>)> = None;
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            if let Some(block) = current.take() {
                blocks.push(block);
            }
            continue;
        }
        if line.starts_with('t') {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let w = match cols.as_slice() {
                ["t", "x", "y"] => 3,
                ["t", "x", "y", "vx", "vy"] => 5,
                _ => return Err(parse_err(lineno, format!("unrecognized header `{line}`"))),
            };
            if width.is_some_and(|prev| prev != w) {
                return Err(parse_err(lineno, "header changes column count".into()));
            }
            width = Some(w);
            continue;
        }
        let w = width.ok_or_else(|| parse_err(lineno, "data before header".into()))?;
        let values = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if values.len() != w {
            return Err(parse_err(
                lineno,
                format!("expected {w} columns, found {}", values.len()),
            ));
        }
        current.get_or_insert_with(|| (lineno, Vec::new())).1.push(values);
    }
    if let Some(block) = current.take() {
        blocks.push(block);
    }
    if blocks.is_empty() {
        return Err(parse_err(0, "no trajectories found".into()));
    }
    blocks
        .into_iter()
        .map(|(start, rows)| {
            let traj = if rows[0].len() == 5 {
                PlanarTrajectory::from_samples(
                    rows.iter()
                        .map(|r| PlanarSample {
                            t: r[0],
                            x: r[1],
                            y: r[2],
                            vx: r[3],
                            vy: r[4],
                        })
                        .collect(),
                )
            } else {
                let pts: Vec<_> = rows.iter().map(|r| (r[0], r[1], r[2])).collect();
                PlanarTrajectory::from_positions(&pts)
            };
            traj.map_err(|e| match e {
                Error::TooShort { .. } => e,
                other => parse_err(start, other.to_string()),
            })
        })
        .collect()
}

pub fn write_planar_trajectories(path: &Path, trajectories: &[PlanarTrajectory]) -> Result<()> {
    let mut out = String::new();
    for (i, traj) in trajectories.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("t,x,y\n");
        for s in traj.samples() {
            let _ = writeln!(out, "{},{},{}", s.t, s.x, s.y);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Shapes produced by the built-in planar generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticShape {
    #[serde(rename = "s_shape")]
    S,
    #[serde(rename = "j_shape")]
    J,
    Spiral,
}

impl SyntheticShape {
    pub const ALL: [SyntheticShape; 3] = [SyntheticShape::S, SyntheticShape::J, SyntheticShape::Spiral];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticShape::S => "s_shape",
            SyntheticShape::J => "j_shape",
            SyntheticShape::Spiral => "spiral",
        }
    }

    /// Nominal curve, `u` runs from 0 (start) to 1 (goal at the origin).
    fn point(self, u: f64) -> (f64, f64) {
        use std::f64::consts::PI;
        match self {
            SyntheticShape::S => (0.12 * (2.0 * PI * u).sin(), 0.25 * (1.0 - u)),
            SyntheticShape::J => (
                0.25 * (1.0 - u),
                0.25 * (1.0 - u).powi(2) - 0.1 * (PI * u).sin(),
            ),
            SyntheticShape::Spiral => {
                let r = 0.2 * (1.0 - u);
                let th = 0.25 * PI + 3.0 * PI * u;
                (r * th.cos(), r * th.sin())
            }
        }
    }
}

/// Generates `demos` planar demonstrations of one shape. Each demo is a
/// randomly perturbed copy of the nominal curve whose perturbation fades
/// out toward the goal, traversed with a decelerating time law.
pub fn synthetic_planar(
    shape: SyntheticShape,
    demos: usize,
    samples: usize,
    duration: f64,
    seed: u64,
) -> Vec<PlanarTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (shape as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..demos)
        .map(|_| {
            let offset = (rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
            let scale = rng.random_range(0.92..1.08);
            let pts: Vec<(f64, f64, f64)> = (0..samples)
                .map(|i| {
                    let tau = i as f64 / (samples - 1) as f64;
                    let u = 1.0 - (1.0 - tau).powi(2);
                    let (x, y) = shape.point(u);
                    let fade = (1.0 - u).powi(2);
                    (
                        tau * duration,
                        scale * x + fade * offset.0,
                        scale * y + fade * offset.1,
                    )
                })
                .collect();
            PlanarTrajectory::from_positions(&pts).expect("generated trajectory is valid")
        })
        .collect()
}

/// Scales all trajectories of a class uniformly so that their joint
/// bounding box fits in a square of side `box_size`.
pub fn fit_to_box(trajectories: &[PlanarTrajectory], box_size: f64) -> Vec<PlanarTrajectory> {
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for s in trajectories.iter().flat_map(|t| t.samples()) {
        lo = (lo.0.min(s.x), lo.1.min(s.y));
        hi = (hi.0.max(s.x), hi.1.max(s.y));
    }
    let extent = (hi.0 - lo.0).max(hi.1 - lo.1);
    let k = if extent > 0.0 { box_size / extent } else { 1.0 };
    trajectories
        .iter()
        .map(|t| PlanarTrajectory {
            samples: t
                .samples()
                .iter()
                .map(|s| PlanarSample {
                    x: s.x * k,
                    y: s.y * k,
                    vx: s.vx * k,
                    vy: s.vy * k,
                    ..*s
                })
                .collect(),
        })
        .collect()
}

/// How the camera advances along the optical axis during augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthProfile {
    /// Linear in the sample index.
    LinearInTime,
    /// Linear in the normalized planar arc length, so the approach along
    /// the optical axis slows down together with the planar motion.
    LinearInArcLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Camera-to-pattern distance at the first sample, meters.
    pub z_start: f64,
    /// Camera-to-pattern distance at the last sample; the goal pose sits
    /// at this distance.
    pub z_end: f64,
    pub depth_profile: DepthProfile,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            z_start: 1.0,
            z_end: 0.5,
            depth_profile: DepthProfile::LinearInArcLength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoSample {
    pub t: f64,
    pub position: Vec3,
    pub features: Features,
    pub error: VisualError,
    pub velocity: Velocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub class_name: String,
    pub index: usize,
    /// Sampling period used for velocities, seconds.
    pub period: f64,
    pub samples: Vec<DemoSample>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.samples.iter().map(|s| s.position)
    }

    pub fn epsilons<'a>(&'a self, pinv: &'a PseudoInverseMatrix) -> impl Iterator<Item = CartesianError> + 'a {
        self.samples.iter().map(move |s| pinv * s.error)
    }

    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum()
    }

    /// Largest feature-error norm along the demonstration.
    pub fn feature_excursion(&self) -> f64 {
        self.samples.iter().map(|s| s.error.norm()).fold(0.0, f64::max)
    }

    /// Recomputes features and errors from the stored camera positions.
    pub fn reproject(&mut self, scene: &Scene) -> Result<()> {
        for s in &mut self.samples {
            s.features = scene.features(&scene.camera_at(s.position))?;
            s.error = s.features - scene.desired;
        }
        Ok(())
    }

    /// Forward differences of positions over `period`; the last sample is
    /// at rest.
    pub fn recompute_velocities(&mut self) {
        let n = self.samples.len();
        for i in 0..n {
            self.samples[i].velocity = if i + 1 < n {
                (self.samples[i + 1].position - self.samples[i].position) / self.period
            } else {
                Velocity::zeros()
            };
        }
    }
}

/// Lifts a planar trajectory into a camera trajectory with constant
/// orientation and projects the pattern at every sample. The planar path
/// is translated so that it ends at the goal pose.
pub fn augment(
    planar: &PlanarTrajectory,
    config: &AugmentConfig,
    scene: &Scene,
    class_name: &str,
    index: usize,
) -> Result<Demonstration> {
    let samples = planar.samples();
    let n = samples.len();
    let last = samples[n - 1];
    let goal = scene.target.position;
    let total_len = planar.path_length();
    let mut arc = 0.0;
    let mut out = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        if i > 0 {
            arc += (s.x - samples[i - 1].x).hypot(s.y - samples[i - 1].y);
        }
        let progress = match config.depth_profile {
            DepthProfile::LinearInArcLength if total_len > 0.0 => arc / total_len,
            _ => i as f64 / (n - 1) as f64,
        };
        let depth = config.z_start + (config.z_end - config.z_start) * progress;
        let position = Vec3::new(
            goal.x + s.x - last.x,
            goal.y + s.y - last.y,
            goal.z - (depth - config.z_end),
        );
        let features = scene.features(&scene.camera_at(position))?;
        out.push(DemoSample {
            t: s.t - samples[0].t,
            position,
            features,
            error: features - scene.desired,
            velocity: Velocity::zeros(),
        });
    }
    for i in 0..n - 1 {
        let dt = out[i + 1].t - out[i].t;
        out[i].velocity = (out[i + 1].position - out[i].position) / dt;
    }
    let period = (out[n - 1].t - out[0].t) / (n - 1) as f64;
    Ok(Demonstration {
        class_name: class_name.to_string(),
        index,
        period,
        samples: out,
    })
}

/// Linear interpolation over normalized time to exactly `n` samples at
/// spacing `period`. Velocities are recomputed from the resampled
/// positions; endpoints are preserved.
pub fn resample(demo: &Demonstration, n: usize, period: f64) -> Result<Demonstration> {
    if demo.len() < 2 {
        return Err(Error::TooShort { len: demo.len() });
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("cannot resample to {n} samples")));
    }
    if n == demo.len() && period == demo.period {
        return Ok(demo.clone());
    }
    let src = &demo.samples;
    let (t0, t1) = (src[0].t, src[src.len() - 1].t);
    let mut j = 0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let sample = if i == 0 {
            src[0]
        } else if i == n - 1 {
            src[src.len() - 1]
        } else {
            let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
            while j + 2 < src.len() && src[j + 1].t <= t {
                j += 1;
            }
            let (a, b) = (&src[j], &src[j + 1]);
            let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            DemoSample {
                t,
                position: a.position.lerp(&b.position, w),
                features: a.features.lerp(&b.features, w),
                error: a.error.lerp(&b.error, w),
                velocity: Velocity::zeros(),
            }
        };
        samples.push(DemoSample {
            t: i as f64 * period,
            ..sample
        });
    }
    let mut out = Demonstration {
        class_name: demo.class_name.clone(),
        index: demo.index,
        period,
        samples,
    };
    out.recompute_velocities();
    Ok(out)
}

/// Demonstration produced by the classical law with the fixed target
/// interaction matrix, recorded for exactly `n` samples.
pub fn baseline_demonstration(
    scene: &Scene,
    start: Vec3,
    lambda: f64,
    period: f64,
    n: usize,
    class_name: &str,
    index: usize,
) -> Result<Demonstration> {
    let mut position = start;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let features = scene.features(&scene.camera_at(position))?;
        let error = features - scene.desired;
        let velocity = vs_baseline(&scene.epsilon(&error), lambda);
        samples.push(DemoSample {
            t: i as f64 * period,
            position,
            features,
            error,
            velocity,
        });
        position += velocity * period;
    }
    Ok(Demonstration {
        class_name: class_name.to_string(),
        index,
        period,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingKind {
    Rds,
    Clf,
    Fdm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPair {
    pub input: CartesianError,
    pub output: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub kind: TrainingKind,
    pub pairs: Vec<TrainingPair>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.pairs.iter().map(|p| p.input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.pairs.iter().map(|p| p.output)
    }
}

/// Reshaping-term targets `u = v + lambda * eps`, i.e. the reshaped law
/// solved for its additive term with the clock held at one.
pub fn build_rds_training(demos: &[Demonstration], lambda: f64, pinv: &PseudoInverseMatrix) -> TrainingSet {
    let pairs = demos
        .iter()
        .flat_map(|d| d.samples.iter())
        .map(|s| {
            let eps = pinv * s.error;
            TrainingPair {
                input: eps,
                output: s.velocity + lambda * eps,
            }
        })
        .collect();
    TrainingSet {
        kind: TrainingKind::Rds,
        pairs,
    }
}

/// Flow targets `f = v`.
pub fn build_clf_training(demos: &[Demonstration], pinv: &PseudoInverseMatrix) -> TrainingSet {
    let pairs = demos
        .iter()
        .flat_map(|d| d.samples.iter())
        .map(|s| TrainingPair {
            input: pinv * s.error,
            output: s.velocity,
        })
        .collect();
    TrainingSet {
        kind: TrainingKind::Clf,
        pairs,
    }
}

/// Averaged demonstration paired with the straight-line reference.
#[derive(Debug, Clone, PartialEq)]
pub struct FdmTraining {
    /// Pairs `(averaged eps_n, linear eps_n)`, `n = 1..N`.
    pub set: TrainingSet,
    /// Mean initial error.
    pub eps1: Vec3,
    pub samples: usize,
}

impl FdmTraining {
    /// The straight-line reference trajectory.
    pub fn linear(&self) -> Vec<Vec3> {
        self.set.outputs().collect()
    }

    /// The averaged demonstration.
    pub fn averaged(&self) -> Vec<Vec3> {
        self.set.inputs().collect()
    }
}

pub fn build_fdm_training(demos: &[Demonstration], pinv: &PseudoInverseMatrix) -> Result<FdmTraining> {
    let first = demos
        .first()
        .ok_or_else(|| Error::InvalidInput("no demonstrations".into()))?;
    let n = first.len();
    if let Some(d) = demos.iter().find(|d| d.len() != n) {
        return Err(Error::UnequalLengths {
            expected: n,
            found: d.len(),
        });
    }
    let count = demos.len() as f64;
    let averaged: Vec<Vec3> = (0..n)
        .map(|i| demos.iter().map(|d| pinv * d.samples[i].error).sum::<Vec3>() / count)
        .collect();
    let eps1 = averaged[0];
    let pairs = averaged
        .iter()
        .enumerate()
        .map(|(i, &avg)| {
            let step = (i + 1) as f64;
            TrainingPair {
                input: avg,
                output: eps1 * ((n as f64 - step) / n as f64),
            }
        })
        .collect();
    Ok(FdmTraining {
        set: TrainingSet {
            kind: TrainingKind::Fdm,
            pairs,
        },
        eps1,
        samples: n,
    })
}

const DEMO_HEADER_PREFIX: &str = "n,t,px,py,pz";

fn demo_header() -> String {
    let mut h = String::from(DEMO_HEADER_PREFIX);
    for i in 1..=FEATURE_DIM {
        let _ = write!(h, ",s{i}");
    }
    for i in 1..=FEATURE_DIM {
        let _ = write!(h, ",e{i}");
    }
    h.push_str(",vx,vy,vz");
    h
}

/// Writes `n,t,px,py,pz,s1..s8,e1..e8,vx,vy,vz`.
pub fn write_demonstration_csv(path: &Path, demo: &Demonstration) -> Result<()> {
    let mut out = demo_header();
    out.push('\n');
    for (i, s) in demo.samples.iter().enumerate() {
        let _ = write!(out, "{},{:?},{:?},{:?},{:?}", i + 1, s.t, s.position.x, s.position.y, s.position.z);
        for v in s.features.iter().chain(s.error.iter()).chain(s.velocity.iter()) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_demonstration_csv(path: &Path, class_name: &str, index: usize) -> Result<Demonstration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == demo_header() => {}
        _ => return Err(parse_err(1, "missing or unexpected header".into())),
    }
    let cols = 5 + 2 * FEATURE_DIM + 3;
    let mut samples = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(idx + 1, e.to_string()))?;
        if v.len() != cols {
            return Err(parse_err(idx + 1, format!("expected {cols} columns, found {}", v.len())));
        }
        samples.push(DemoSample {
            t: v[1],
            position: Vec3::new(v[2], v[3], v[4]),
            features: Features::from_column_slice(&v[5..5 + FEATURE_DIM]),
            error: VisualError::from_column_slice(&v[5 + FEATURE_DIM..5 + 2 * FEATURE_DIM]),
            velocity: Velocity::from_column_slice(&v[5 + 2 * FEATURE_DIM..]),
        });
    }
    if samples.len() < 2 {
        return Err(Error::TooShort { len: samples.len() });
    }
    let period = (samples[samples.len() - 1].t - samples[0].t) / (samples.len() - 1) as f64;
    Ok(Demonstration {
        class_name: class_name.to_string(),
        index,
        period,
        samples,
    })
}
