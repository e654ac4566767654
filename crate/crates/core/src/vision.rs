//! Pinhole camera simulation and the image-based visual servoing loop.
//!
//! The camera is controlled in translation only. Its orientation is fixed
//! for the whole run, so the interaction matrix keeps only the three
//! translational columns of the classical point-feature form:
//!
//! ```text
//! [ -1/Z    0    x/Z ]
//! [   0   -1/Z   y/Z ]
//! ```
//!
//! Every learned controller in this crate works on the Cartesian error
//! `eps = L⁺ e`, where `L⁺` is the pseudoinverse of the interaction matrix
//! evaluated once at the target configuration.

use nalgebra::{Point3, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of tracked point features.
pub const NUM_POINTS: usize = 4;
/// Dimension of the stacked feature vector.
pub const FEATURE_DIM: usize = 2 * NUM_POINTS;

pub type Vec3 = Vector3<f64>;
/// Stacked normalized image coordinates `(x1, y1, ..., x4, y4)`.
pub type Features = SVector<f64, FEATURE_DIM>;
/// `e = s - s*`.
pub type VisualError = SVector<f64, FEATURE_DIM>;
/// `eps = L⁺ e`, in meters.
pub type CartesianError = Vec3;
/// Linear camera velocity in meters per second.
pub type Velocity = Vec3;
/// Translational part of the point-feature interaction matrix.
pub type InteractionMatrix = SMatrix<f64, FEATURE_DIM, 3>;
pub type PseudoInverseMatrix = SMatrix<f64, 3, FEATURE_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_length: f64,
    pub principal_point: [f64; 2],
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal_length: 1.0,
            principal_point: [0.0, 0.0],
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length > 0.0) {
            return Err(Error::Config(format!(
                "focal length must be positive, got {}",
                self.focal_length
            )));
        }
        Ok(())
    }
}

/// World-frame camera pose. The rotation maps camera-frame vectors into
/// the world frame and stays constant during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraState {
    pub position: Vec3,
    pub orientation: Rotation3<f64>,
}

impl CameraState {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            orientation: Rotation3::identity(),
        }
    }

    /// Expresses a world point in the camera frame.
    pub fn to_camera_frame(&self, world: &Point3<f64>) -> Vec3 {
        self.orientation.inverse() * (world.coords - self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPattern {
    points: [[f64; 3]; NUM_POINTS],
}

impl TargetPattern {
    pub fn new(points: [[f64; 3]; NUM_POINTS]) -> Result<Self> {
        let p: Vec<Vec3> = points.iter().map(|q| Vec3::from(*q)).collect();
        let spread = (1..NUM_POINTS)
            .flat_map(|i| (i + 1..NUM_POINTS).map(move |j| (i, j)))
            .map(|(i, j)| (p[i] - p[0]).cross(&(p[j] - p[0])).norm())
            .fold(0.0_f64, f64::max);
        if spread < 1e-12 {
            return Err(Error::InvalidInput(
                "target pattern points are collinear".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Axis-aligned square of the given side, facing the camera along +z.
    pub fn square(center: Vec3, side: f64) -> Self {
        let h = side / 2.0;
        let offsets = [(-h, -h), (h, -h), (h, h), (-h, h)];
        let points = offsets.map(|(dx, dy)| [center.x + dx, center.y + dy, center.z]);
        Self { points }
    }

    pub fn points(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.points.iter().map(|p| Point3::from(*p))
    }

    pub fn centroid(&self) -> Vec3 {
        self.points().map(|p| p.coords).sum::<Vec3>() / NUM_POINTS as f64
    }
}

/// Camera-frame coordinates of every pattern point.
pub fn camera_frame_points(camera: &CameraState, pattern: &TargetPattern) -> [Vec3; NUM_POINTS] {
    let mut out = [Vec3::zeros(); NUM_POINTS];
    for (slot, p) in out.iter_mut().zip(pattern.points()) {
        *slot = camera.to_camera_frame(&p);
    }
    out
}

/// Perspective projection of the pattern, together with the point depths.
pub fn project_with_depths(
    camera: &CameraState,
    pattern: &TargetPattern,
    intrinsics: &CameraIntrinsics,
) -> Result<(Features, [f64; NUM_POINTS])> {
    let mut s = Features::zeros();
    let mut depths = [0.0; NUM_POINTS];
    for (i, pc) in camera_frame_points(camera, pattern).iter().enumerate() {
        if !(pc.z > 0.0) {
            return Err(Error::NonPositiveDepth {
                index: i,
                depth: pc.z,
            });
        }
        s[2 * i] = intrinsics.focal_length * pc.x / pc.z + intrinsics.principal_point[0];
        s[2 * i + 1] = intrinsics.focal_length * pc.y / pc.z + intrinsics.principal_point[1];
        depths[i] = pc.z;
    }
    Ok((s, depths))
}

pub fn project(
    camera: &CameraState,
    pattern: &TargetPattern,
    intrinsics: &CameraIntrinsics,
) -> Result<Features> {
    project_with_depths(camera, pattern, intrinsics).map(|(s, _)| s)
}

/// Point-feature interaction matrix restricted to camera translation.
/// Features must be normalized image coordinates.
pub fn interaction_matrix(features: &Features, depths: &[f64; NUM_POINTS]) -> Result<InteractionMatrix> {
    let mut l = InteractionMatrix::zeros();
    for (i, &z) in depths.iter().enumerate() {
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth { index: i, depth: z });
        }
        let (x, y) = (features[2 * i], features[2 * i + 1]);
        l[(2 * i, 0)] = -1.0 / z;
        l[(2 * i, 2)] = x / z;
        l[(2 * i + 1, 1)] = -1.0 / z;
        l[(2 * i + 1, 2)] = y / z;
    }
    Ok(l)
}

/// Moore-Penrose pseudoinverse together with the numerical rank it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoInverse {
    pub matrix: PseudoInverseMatrix,
    pub rank: usize,
}

impl PseudoInverse {
    /// Full column rank is 3; anything less means a degenerate feature set.
    pub fn rank_deficient(&self) -> bool {
        self.rank < 3
    }
}

/// SVD-based pseudoinverse. Singular values below
/// `max(rows, cols) * eps * sigma_max` are treated as zero.
///
/// The SVD is taken of the triangular factor of a Householder QR, which
/// has the same singular values. Decomposing the 8x3 matrix directly
/// loses about six digits when two singular values nearly coincide.
pub fn pseudoinverse(l: &InteractionMatrix) -> PseudoInverse {
    let qr = l.qr();
    let q = qr.q();
    let svd = qr.r().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = FEATURE_DIM as f64 * f64::EPSILON * sigma_max;
    let u = q * svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut matrix = PseudoInverseMatrix::zeros();
    let mut rank = 0;
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > tol && sigma > 0.0 {
            rank += 1;
            matrix += v_t.row(k).transpose() * u.column(k).transpose() / sigma;
        }
    }
    PseudoInverse { matrix, rank }
}

pub fn cartesian_error(target_pinv: &PseudoInverseMatrix, e: &VisualError) -> CartesianError {
    target_pinv * e
}

/// Classical translational IBVS law `v = -lambda * eps`.
pub fn vs_baseline(eps: &CartesianError, lambda: f64) -> Velocity {
    -lambda * eps
}

/// Explicit Euler step of the camera position; orientation is untouched.
pub fn integrate_step(camera: &CameraState, v: &Velocity, period: f64) -> CameraState {
    CameraState {
        position: camera.position + v * period,
        orientation: camera.orientation,
    }
}

/// Fixed scene: the pattern, the intrinsics, and the goal pose with its
/// precomputed desired features and target interaction matrix.
#[derive(Debug, Clone)]
pub struct Scene {
    pub pattern: TargetPattern,
    pub intrinsics: CameraIntrinsics,
    pub target: CameraState,
    pub desired: Features,
    pub target_interaction: InteractionMatrix,
    pub target_pinv: PseudoInverseMatrix,
}

impl Scene {
    pub fn new(pattern: TargetPattern, intrinsics: CameraIntrinsics, target: CameraState) -> Result<Self> {
        intrinsics.validate()?;
        let (desired, depths) = project_with_depths(&target, &pattern, &intrinsics)?;
        let target_interaction = interaction_matrix(&desired, &depths)?;
        let pinv = pseudoinverse(&target_interaction);
        if pinv.rank_deficient() {
            return Err(Error::InvalidInput(format!(
                "target interaction matrix has rank {}",
                pinv.rank
            )));
        }
        Ok(Self {
            pattern,
            intrinsics,
            target,
            desired,
            target_interaction,
            target_pinv: pinv.matrix,
        })
    }

    pub fn features(&self, camera: &CameraState) -> Result<Features> {
        project(camera, &self.pattern, &self.intrinsics)
    }

    pub fn error(&self, camera: &CameraState) -> Result<VisualError> {
        Ok(self.features(camera)? - self.desired)
    }

    pub fn epsilon(&self, e: &VisualError) -> CartesianError {
        cartesian_error(&self.target_pinv, e)
    }

    /// Camera pose with the target orientation at the given position.
    pub fn camera_at(&self, position: Vec3) -> CameraState {
        CameraState {
            position,
            orientation: self.target.orientation,
        }
    }
}

/// Everything a controller may look at during one control step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub step: usize,
    pub time: f64,
    pub camera: &'a CameraState,
    pub features: &'a Features,
    pub error: &'a VisualError,
    pub depths: &'a [f64; NUM_POINTS],
    /// Cartesian error computed with the fixed target pseudoinverse.
    pub epsilon: CartesianError,
}

/// Velocity command plus the method-specific diagnostics recorded per step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Command {
    pub velocity: Velocity,
    pub clock: Option<f64>,
    pub lyapunov: Option<f64>,
    pub gamma: Option<f64>,
    /// The controller fell back to the baseline law for this step.
    pub fallback: bool,
}

impl Command {
    pub fn velocity(velocity: Velocity) -> Self {
        Self {
            velocity,
            ..Self::default()
        }
    }
}

pub trait Controller {
    fn command(&self, ctx: &StepContext<'_>) -> Result<Command>;
}

impl<C: Controller + ?Sized> Controller for &C {
    fn command(&self, ctx: &StepContext<'_>) -> Result<Command> {
        (**self).command(ctx)
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn command(&self, ctx: &StepContext<'_>) -> Result<Command> {
        (**self).command(ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionSource {
    /// `L` fixed at its value in the goal configuration.
    Target,
    /// True `L` recomputed from the current features and depths.
    TruePerStep,
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineController {
    pub lambda: f64,
    pub interaction: InteractionSource,
}

impl BaselineController {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            interaction: InteractionSource::Target,
        }
    }

    pub fn true_interaction(lambda: f64) -> Self {
        Self {
            lambda,
            interaction: InteractionSource::TruePerStep,
        }
    }
}

impl Controller for BaselineController {
    fn command(&self, ctx: &StepContext<'_>) -> Result<Command> {
        let eps = match self.interaction {
            InteractionSource::Target => ctx.epsilon,
            InteractionSource::TruePerStep => {
                let l = interaction_matrix(ctx.features, ctx.depths)?;
                pseudoinverse(&l).matrix * ctx.error
            }
        };
        Ok(Command::velocity(vs_baseline(&eps, self.lambda)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Sampling period in seconds.
    pub period: f64,
    pub max_steps: usize,
    /// Convergence threshold on `|e|`.
    pub convergence_tol: f64,
    /// The run is declared diverged once `|e|` exceeds this.
    pub divergence_bound: f64,
    pub velocity_clamp: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            period: 0.03,
            max_steps: 1000,
            convergence_tol: 1e-3,
            divergence_bound: 5.0,
            velocity_clamp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub position: Vec3,
    pub features: Features,
    pub error: VisualError,
    pub epsilon: CartesianError,
    /// Command applied after this sample; zero on the terminal record.
    pub velocity: Velocity,
    pub clock: Option<f64>,
    pub lyapunov: Option<f64>,
    pub gamma: Option<f64>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub converged: bool,
}

impl Trajectory {
    /// Number of control steps actually applied.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn error_norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.error.norm())
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("trajectory has at least one record")
    }
}

/// Runs project -> error -> controller -> integrate until `|e|` drops
/// below the convergence tolerance or `max_steps` commands were applied.
pub fn simulate<C: Controller + ?Sized>(
    controller: &C,
    init: CameraState,
    scene: &Scene,
    config: &SimConfig,
) -> Result<Trajectory> {
    let mut camera = init;
    let mut records = Vec::with_capacity(config.max_steps.min(10_000) + 1);
    for step in 0..=config.max_steps {
        let time = step as f64 * config.period;
        let (features, depths) = project_with_depths(&camera, &scene.pattern, &scene.intrinsics)?;
        let error = features - scene.desired;
        let error_norm = error.norm();
        let epsilon = scene.epsilon(&error);
        let mut record = StepRecord {
            step,
            time,
            position: camera.position,
            features,
            error,
            epsilon,
            velocity: Velocity::zeros(),
            clock: None,
            lyapunov: None,
            gamma: None,
            fallback: false,
        };
        if error_norm < config.convergence_tol {
            records.push(record);
            return Ok(Trajectory {
                records,
                converged: true,
            });
        }
        if !(error_norm <= config.divergence_bound) {
            return Err(Error::Diverged { step, error_norm });
        }
        if step == config.max_steps {
            records.push(record);
            break;
        }
        let ctx = StepContext {
            step,
            time,
            camera: &camera,
            features: &features,
            error: &error,
            depths: &depths,
            epsilon,
        };
        let cmd = controller.command(&ctx)?;
        let mut v = cmd.velocity;
        if let Some(limit) = config.velocity_clamp {
            let n = v.norm();
            if n > limit {
                v *= limit / n;
            }
        }
        record.velocity = v;
        record.clock = cmd.clock;
        record.lyapunov = cmd.lyapunov;
        record.gamma = cmd.gamma;
        record.fallback = cmd.fallback;
        records.push(record);
        camera = integrate_step(&camera, &v, config.period);
    }
    Ok(Trajectory {
        records,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn default_scene() -> Scene {
        let pattern = TargetPattern::square(Vec3::new(0.0, 0.0, 0.5), 0.2);
        Scene::new(pattern, CameraIntrinsics::default(), CameraState::at(Vec3::zeros())).unwrap()
    }

    fn single_point_pattern(p: [f64; 3]) -> TargetPattern {
        // three extra points far off-axis keep the pattern non-degenerate
        TargetPattern::new([p, [1.0, 0.0, 2.0], [0.0, 1.0, 2.0], [1.0, 1.0, 3.0]]).unwrap()
    }

    #[test]
    fn optical_axis_point_projects_to_origin() {
        let s = project(
            &CameraState::at(Vec3::zeros()),
            &single_point_pattern([0.0, 0.0, 1.0]),
            &CameraIntrinsics::default(),
        )
        .unwrap();
        assert_eq!((s[0], s[1]), (0.0, 0.0));
    }

    #[test]
    fn unit_depth_point_projects_to_its_coordinates() {
        let s = project(
            &CameraState::at(Vec3::zeros()),
            &single_point_pattern([0.1, 0.2, 1.0]),
            &CameraIntrinsics::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(s[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn centered_square_projects_to_plus_minus() {
        let scene = default_scene();
        for i in 0..NUM_POINTS {
            assert_abs_diff_eq!(scene.desired[2 * i].abs(), 0.2, epsilon = 1e-15);
            assert_abs_diff_eq!(scene.desired[2 * i + 1].abs(), 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn point_behind_camera_is_rejected() {
        let pattern = TargetPattern::square(Vec3::new(0.0, 0.0, 0.5), 0.2);
        let cam = CameraState::at(Vec3::new(0.0, 0.0, 0.6));
        assert!(matches!(
            project(&cam, &pattern, &CameraIntrinsics::default()),
            Err(Error::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn collinear_pattern_is_rejected() {
        let r = TargetPattern::new([[0.0, 0.0, 1.0], [0.1, 0.0, 1.0], [0.2, 0.0, 1.0], [0.3, 0.0, 1.0]]);
        assert!(r.is_err());
    }

    #[test]
    fn interaction_rows_follow_point_form() {
        let mut s = Features::zeros();
        s[0] = 0.2;
        s[1] = -0.1;
        let l = interaction_matrix(&s, &[0.5, 1.0, 1.0, 1.0]).unwrap();
        let expected = [[-2.0, 0.0, 0.4], [0.0, -2.0, -0.2]];
        for r in 0..2 {
            for c in 0..3 {
                assert_abs_diff_eq!(l[(r, c)], expected[r][c], epsilon = 1e-15);
            }
        }
        // centered point at unit depth
        assert_eq!(l[(2, 0)], -1.0);
        assert_eq!(l[(3, 1)], -1.0);
        assert_eq!(l[(2, 2)], 0.0);
    }

    #[test]
    fn zero_depth_is_rejected() {
        let r = interaction_matrix(&Features::zeros(), &[1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(r, Err(Error::NonPositiveDepth { index: 1, .. })));
    }

    #[test]
    fn pinv_of_orthogonal_columns() {
        // columns with norms 4, 4 and sqrt(1.28): the centered square
        let scene = default_scene();
        let l = scene.target_interaction;
        let norms2: Vec<f64> = (0..3).map(|c| l.column(c).norm_squared()).collect();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert_abs_diff_eq!(l.column(a).dot(&l.column(b)), 0.0, epsilon = 1e-15);
            }
        }
        let p = pseudoinverse(&l);
        assert_eq!(p.rank, 3);
        for r in 0..3 {
            for c in 0..FEATURE_DIM {
                assert_abs_diff_eq!(p.matrix[(r, c)], l[(c, r)] / norms2[r], epsilon = 1e-14);
            }
        }
        let ident = p.matrix * l;
        assert_abs_diff_eq!(ident, nalgebra::Matrix3::identity(), epsilon = 1e-10);
    }

    #[test]
    fn pinv_of_zero_is_zero_and_flagged() {
        let p = pseudoinverse(&InteractionMatrix::zeros());
        assert!(p.rank_deficient());
        assert_eq!(p.matrix, PseudoInverseMatrix::zeros());
    }

    #[test]
    fn cartesian_error_cases() {
        let scene = default_scene();
        assert_eq!(scene.epsilon(&VisualError::zeros()), Vec3::zeros());
        let col: VisualError = scene.target_interaction.column(0).into();
        assert_abs_diff_eq!(scene.epsilon(&col), Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        // remove the column-space component to get an orthogonal error
        let mut e = VisualError::from_fn(|i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
        let l = scene.target_interaction;
        e -= l * (scene.target_pinv * e);
        assert_abs_diff_eq!(scene.epsilon(&e), Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn baseline_and_euler_step() {
        assert_eq!(vs_baseline(&Vec3::new(0.1, 0.0, 0.0), 1.0), Vec3::new(-0.1, 0.0, 0.0));
        assert_eq!(vs_baseline(&Vec3::zeros(), 1.0), Vec3::zeros());
        let v = vs_baseline(&Vec3::new(0.01, -0.02, 0.03), 2.0);
        assert_abs_diff_eq!(v, Vec3::new(-0.02, 0.04, -0.06), epsilon = 1e-15);

        let cam = CameraState::at(Vec3::new(0.1, 0.2, 0.3));
        assert_eq!(integrate_step(&cam, &Vec3::zeros(), 0.03), cam);
        let moved = integrate_step(&cam, &Vec3::new(1.0, 0.0, 0.0), 0.03);
        assert_abs_diff_eq!(moved.position.x, 0.13, epsilon = 1e-15);
        let down = Vec3::new(0.0, 0.0, -0.5);
        let twice = integrate_step(&integrate_step(&cam, &down, 0.03), &down, 0.03);
        assert_abs_diff_eq!(twice.position.z, 0.3 - 0.03, epsilon = 1e-15);
        assert_eq!(twice.orientation, cam.orientation);
    }

    #[test]
    fn simulate_at_target_converges_immediately() {
        let scene = default_scene();
        let traj = simulate(&BaselineController::new(1.0), scene.target, &scene, &SimConfig::default()).unwrap();
        assert!(traj.converged);
        assert_eq!(traj.steps(), 0);
    }

    #[test]
    fn simulate_small_offset_decays_monotonically() {
        let scene = default_scene();
        let init = scene.camera_at(Vec3::new(0.03, -0.02, -0.05));
        let traj = simulate(&BaselineController::true_interaction(1.0), init, &scene, &SimConfig::default()).unwrap();
        assert!(traj.converged);
        let norms: Vec<f64> = traj.error_norms().collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
    }

    struct Constant(Vec3);
    impl Controller for Constant {
        fn command(&self, _: &StepContext<'_>) -> Result<Command> {
            Ok(Command::velocity(self.0))
        }
    }

    #[test]
    fn constant_push_diverges() {
        let scene = default_scene();
        let init = scene.camera_at(Vec3::new(0.05, 0.0, 0.0));
        let r = simulate(&Constant(Vec3::new(1.0, 0.0, 0.0)), init, &scene, &SimConfig::default());
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn velocity_clamp_limits_norm() {
        let scene = default_scene();
        let init = scene.camera_at(Vec3::new(0.0, 0.0, -0.3));
        let cfg = SimConfig {
            velocity_clamp: Some(0.05),
            ..SimConfig::default()
        };
        let traj = simulate(&BaselineController::new(1.0), init, &scene, &cfg).unwrap();
        assert!(traj.records.iter().all(|r| r.velocity.norm() <= 0.05 + 1e-15));
    }
}
