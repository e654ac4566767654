//! Experiment configuration. Every field has a default, and the resolved
//! configuration is echoed into each report.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clf::{ClfConfig, DecreaseRate};
use crate::dataset::{AugmentConfig, SyntheticShape};
use crate::error::{Error, Result};
use crate::fdm::{FdmConfig, JacobianAt};
use crate::gmr::EmConfig;
use crate::rds::ClockSignal;
use crate::vision::{
    CameraIntrinsics, CameraState, InteractionSource, Scene, SimConfig, TargetPattern, Vec3,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Rds,
    Clfdm,
    Fdm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Rds, Method::Clfdm, Method::Fdm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Rds => "rds",
            Method::Clfdm => "clfdm",
            Method::Fdm => "fdm",
        }
    }

    /// Whether the method has a hyper-parameter swept by the k grid.
    pub fn uses_k(self) -> bool {
        self != Method::Baseline
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub pattern_center: [f64; 3],
    pub pattern_side: f64,
    pub focal_length: f64,
    /// Camera position at the goal.
    pub target_position: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            pattern_center: [0.0, 0.0, 0.5],
            pattern_side: 0.2,
            focal_length: 1.0,
            target_position: [0.0, 0.0, 0.0],
        }
    }
}

impl SceneConfig {
    pub fn build(&self) -> Result<Scene> {
        let intrinsics = CameraIntrinsics {
            focal_length: self.focal_length,
            ..CameraIntrinsics::default()
        };
        intrinsics.validate()?;
        Scene::new(
            TargetPattern::square(Vec3::from(self.pattern_center), self.pattern_side),
            intrinsics,
            CameraState::at(Vec3::from(self.target_position)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Built-in S, J and spiral generator.
    Synthetic,
    /// One `<class>.csv` of planar trajectories per class in `planar_dir`.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub planar_dir: Option<PathBuf>,
    /// Classes to use; empty means every synthetic shape or every CSV file.
    pub classes: Vec<String>,
    pub demos_per_class: usize,
    /// Samples drawn from the synthetic generator before resampling.
    pub dense_samples: usize,
    /// Duration of a synthetic demonstration, seconds.
    pub duration: f64,
    /// Planar trajectories of each class are scaled into a square of this side.
    pub box_size: f64,
    pub augment: AugmentConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic,
            planar_dir: None,
            classes: Vec::new(),
            demos_per_class: 3,
            dense_samples: 400,
            duration: 2.97,
            box_size: 0.5,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub interaction: InteractionSource,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            interaction: InteractionSource::Target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RdsConfig {
    pub clock: ClockSignal,
    pub em: EmConfig,
}

impl Default for RdsConfig {
    fn default() -> Self {
        Self {
            clock: ClockSignal::HoldThenDecay {
                t0: 3.0,
                decay_tau: 0.5,
            },
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClfdmConfig {
    pub rho0: f64,
    pub rate: DecreaseRate,
    /// Largest displacement per period as a fraction of `‖ε‖`. `None` applies
    /// the stabilized flow unscaled.
    pub step_limit: Option<f64>,
    pub fit: ClfConfig,
    pub em: EmConfig,
}

impl Default for ClfdmConfig {
    fn default() -> Self {
        Self {
            rho0: 0.1,
            rate: DecreaseRate::Linear,
            step_limit: Some(1.0),
            fit: ClfConfig::default(),
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdmSettings {
    /// Step counts to sweep; used instead of the top-level `k_grid`.
    pub k_grid: Vec<usize>,
    pub matching: FdmConfig,
    pub jacobian_at: JacobianAt,
}

impl Default for FdmSettings {
    fn default() -> Self {
        Self {
            k_grid: vec![50, 150],
            matching: FdmConfig::default(),
            jacobian_at: JacobianAt::Preimage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Perturbed starts per class.
    pub unseen_per_class: usize,
    /// Perturbation radius as a fraction of the mean demo path length.
    pub unseen_radius_fraction: f64,
    /// Pixels per normalized image unit, used to report feature errors.
    pub pixels_per_unit: f64,
    /// Write one CSV per closed-loop run.
    pub write_trajectories: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            unseen_per_class: 5,
            unseen_radius_fraction: 0.1,
            pixels_per_unit: 500.0,
            write_trajectories: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub methods: Vec<Method>,
    pub lambda: f64,
    pub period: f64,
    /// Samples per demonstration after resampling.
    pub samples: usize,
    pub k_grid: Vec<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub dataset: DatasetConfig,
    pub sim: SimConfig,
    pub baseline: BaselineConfig,
    pub rds: RdsConfig,
    pub clfdm: ClfdmConfig,
    pub fdm: FdmSettings,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            methods: vec![Method::Rds],
            lambda: 1.0,
            period: 0.03,
            samples: 100,
            k_grid: vec![7, 11],
            seed: 1,
            out_dir: PathBuf::from("out"),
            scene: SceneConfig::default(),
            dataset: DatasetConfig::default(),
            sim: SimConfig::default(),
            baseline: BaselineConfig::default(),
            rds: RdsConfig::default(),
            clfdm: ClfdmConfig::default(),
            fdm: FdmSettings::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.config_version != CONFIG_VERSION {
            return fail(format!(
                "unsupported config_version {} (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        if self.methods.is_empty() {
            return fail("no methods selected".into());
        }
        if !(self.lambda > 0.0) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.period > 0.0) {
            return fail(format!("period must be positive, got {}", self.period));
        }
        if self.sim.period != self.period {
            return fail(format!(
                "sim.period ({}) must equal period ({})",
                self.sim.period, self.period
            ));
        }
        if self.samples < 2 {
            return fail(format!("samples must be at least 2, got {}", self.samples));
        }
        for &method in self.methods.iter().filter(|m| m.uses_k()) {
            let (name, grid) = match method {
                Method::Fdm => ("fdm.k_grid", &self.fdm.k_grid),
                _ => ("k_grid", &self.k_grid),
            };
            if grid.is_empty() {
                return fail(format!("{name} is empty"));
            }
            if grid.contains(&0) {
                return fail(format!("{name} entries must be positive"));
            }
        }
        if self.dataset.demos_per_class == 0 {
            return fail("dataset.demos_per_class must be positive".into());
        }
        match self.dataset.source {
            DatasetSource::Synthetic => {
                if let Some(c) = self
                    .dataset
                    .classes
                    .iter()
                    .find(|c| SyntheticShape::from_name(c).is_none())
                {
                    return fail(format!("unknown synthetic class `{c}`"));
                }
            }
            DatasetSource::Csv => match &self.dataset.planar_dir {
                None => return fail("dataset.planar_dir is required for csv input".into()),
                Some(dir) if !dir.is_dir() => {
                    return Err(Error::Parse {
                        path: dir.clone(),
                        line: 0,
                        message: "planar input directory does not exist".into(),
                    })
                }
                Some(_) => {}
            },
        }
        if let ClockSignal::HoldThenDecay { t0, decay_tau } = self.rds.clock {
            ClockSignal::hold_then_decay(t0, decay_tau)?;
        }
        if !(self.clfdm.rho0 > 0.0) {
            return fail(format!("clfdm.rho0 must be positive, got {}", self.clfdm.rho0));
        }
        if let Some(r) = self.clfdm.step_limit {
            if !(r > 0.0) {
                return fail(format!("clfdm.step_limit must be positive, got {r}"));
            }
        }
        if !(self.evaluation.pixels_per_unit > 0.0) {
            return fail("evaluation.pixels_per_unit must be positive".into());
        }
        Ok(())
    }

    /// Hyper-parameter values to sweep for `method`.
    pub fn k_values(&self, method: Method) -> Vec<usize> {
        match method {
            Method::Baseline => vec![0],
            Method::Fdm => self.fdm.k_grid.clone(),
            Method::Rds | Method::Clfdm => self.k_grid.clone(),
        }
    }
}
