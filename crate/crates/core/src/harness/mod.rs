//! Experiment pipeline behind the `dsvs` command line: dataset
//! generation, training over a hyper-parameter grid, closed-loop
//! evaluation and reporting.

pub mod config;
pub mod data;
pub mod evaluate;
pub mod report;
pub mod train;

pub use config::{ExperimentConfig, Method, CONFIG_VERSION};
pub use data::{build_classes, ClassData};
pub use evaluate::{evaluate, RunMetrics, RunOutput, RunReport, RunStatus, StartKind, Stat};
pub use report::{render_table, table, TableRow};
pub use train::{train_all, ModelArtifact, TrainedModel};

use crate::error::Result;

/// Runs every configured method and k in memory, without touching disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunReport>> {
    config.validate()?;
    let scene = config.scene.build()?;
    let classes = build_classes(config, &scene)?;
    let mut reports = Vec::new();
    for &method in &config.methods {
        for k in config.k_values(method) {
            let models = train_all(config, &scene, &classes, method, k);
            reports.push(evaluate(config, &scene, &classes, &models)?.0);
        }
    }
    Ok(reports)
}
