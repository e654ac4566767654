//! Dataset stage: planar sources to augmented, resampled demonstrations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig, SceneConfig};
use crate::dataset::{
    augment, fit_to_box, load_planar_trajectories, read_demonstration_csv, resample, synthetic_planar,
    write_demonstration_csv, AugmentConfig, Demonstration, PlanarTrajectory, SyntheticShape,
};
use crate::error::{Error, Result};
use crate::vision::Scene;

/// All demonstrations of one motion class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub name: String,
    pub demos: Vec<Demonstration>,
}

impl ClassData {
    pub fn mean_path_length(&self) -> f64 {
        self.demos.iter().map(|d| d.path_length()).sum::<f64>() / self.demos.len() as f64
    }

    pub fn mean_feature_excursion(&self) -> f64 {
        self.demos.iter().map(|d| d.feature_excursion()).sum::<f64>() / self.demos.len() as f64
    }
}

fn planar_classes(config: &ExperimentConfig) -> Result<Vec<(String, Vec<PlanarTrajectory>)>> {
    let ds = &config.dataset;
    match ds.source {
        DatasetSource::Synthetic => {
            let shapes: Vec<SyntheticShape> = if ds.classes.is_empty() {
                SyntheticShape::ALL.to_vec()
            } else {
                ds.classes
                    .iter()
                    .map(|c| SyntheticShape::from_name(c).ok_or_else(|| Error::Config(format!("unknown synthetic class `{c}`"))))
                    .collect::<Result<_>>()?
            };
            Ok(shapes
                .into_iter()
                .map(|s| {
                    let trajs = synthetic_planar(s, ds.demos_per_class, ds.dense_samples, ds.duration, config.seed);
                    (s.name().to_string(), trajs)
                })
                .collect())
        }
        DatasetSource::Csv => {
            let dir = ds
                .planar_dir
                .as_deref()
                .ok_or_else(|| Error::Config("dataset.planar_dir is required for csv input".into()))?;
            let entries = fs::read_dir(dir).map_err(|e| Error::Parse {
                path: dir.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            let mut out = Vec::new();
            for path in files {
                let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                if !ds.classes.is_empty() && !ds.classes.contains(&name) {
                    continue;
                }
                let mut trajs = load_planar_trajectories(&path)?;
                trajs.truncate(ds.demos_per_class);
                out.push((name, trajs));
            }
            if out.is_empty() {
                return Err(Error::Parse {
                    path: dir.to_path_buf(),
                    line: 0,
                    message: "no planar class files found".into(),
                });
            }
            Ok(out)
        }
    }
}

/// Builds every class in memory: planar source, box scaling, augmentation,
/// resampling to `samples` points and reprojection.
pub fn build_classes(config: &ExperimentConfig, scene: &Scene) -> Result<Vec<ClassData>> {
    planar_classes(config)?
        .into_iter()
        .map(|(name, planar)| {
            let planar = fit_to_box(&planar, config.dataset.box_size);
            let demos = planar
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let dense = augment(p, &config.dataset.augment, scene, &name, i)?;
                    let mut demo = resample(&dense, config.samples, config.period)?;
                    demo.reproject(scene)?;
                    Ok(demo)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClassData { name, demos })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClass {
    pub name: String,
    pub demos: Vec<String>,
}

/// Written next to the demonstration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_version: u32,
    pub scene: SceneConfig,
    pub augment: AugmentConfig,
    pub box_size: f64,
    pub period: f64,
    pub samples: usize,
    pub classes: Vec<ManifestClass>,
}

pub fn dataset_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("dataset")
}

/// Writes `dataset/<class>/demo_<i>.csv` and `dataset/manifest.json`.
pub fn write_dataset(out_dir: &Path, config: &ExperimentConfig, classes: &[ClassData]) -> Result<DatasetManifest> {
    let root = dataset_dir(out_dir);
    let mut manifest = DatasetManifest {
        config_version: config.config_version,
        scene: config.scene.clone(),
        augment: config.dataset.augment,
        box_size: config.dataset.box_size,
        period: config.period,
        samples: config.samples,
        classes: Vec::new(),
    };
    for class in classes {
        let dir = root.join(&class.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut files = Vec::new();
        for (i, demo) in class.demos.iter().enumerate() {
            let file = format!("demo_{i}.csv");
            write_demonstration_csv(&dir.join(&file), demo)?;
            files.push(format!("{}/{file}", class.name));
        }
        manifest.classes.push(ManifestClass {
            name: class.name.clone(),
            demos: files,
        });
    }
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn generate_dataset(config: &ExperimentConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let scene = config.scene.build()?;
    let classes = build_classes(config, &scene)?;
    write_dataset(out_dir, config, &classes)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(out_dir: &Path) -> Result<(DatasetManifest, Vec<ClassData>)> {
    let root = dataset_dir(out_dir);
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let classes = manifest
        .classes
        .iter()
        .map(|c| {
            let demos = c
                .demos
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let mut d = read_demonstration_csv(&root.join(f), &c.name, i)?;
                    d.period = manifest.period;
                    Ok(d)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClassData {
                name: c.name.clone(),
                demos,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, classes))
}
