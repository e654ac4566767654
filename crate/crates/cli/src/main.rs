use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dsvs::harness::data::{generate_dataset, read_dataset};
use dsvs::harness::evaluate::{read_report, report_dir, write_report};
use dsvs::harness::report::write_summary;
use dsvs::harness::train::{read_models, write_models};
use dsvs::harness::{evaluate, render_table, table, train_all, ExperimentConfig, Method};

/// Learned visual-servoing controllers: dataset generation, training,
/// closed-loop evaluation and reporting.
#[derive(Debug, Parser)]
#[command(name = "dsvs", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML experiment configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Method to run; repeat or comma-separate for several.
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<Method>,
    /// Hyper-parameter grid for every selected method; repeat or
    /// comma-separate for several.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the augmented demonstrations and write them under the output directory.
    Generate,
    /// Fit one model per class for every method and k.
    Train,
    /// Simulate the trained models and write run reports and trajectories.
    Evaluate,
    /// Tabulate run reports. Reads every report under the output directory
    /// when no paths are given.
    Report {
        reports: Vec<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if !self.method.is_empty() {
            config.methods = self.method.clone();
        }
        if !self.k.is_empty() {
            config.k_grid = self.k.clone();
            config.fdm.k_grid = self.k.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            config.out_dir = dir.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn train(config: &ExperimentConfig) -> Result<()> {
    let out = &config.out_dir;
    let scene = config.scene.build()?;
    let (_, classes) = read_dataset(out).context("run `dsvs generate` first")?;
    for &method in &config.methods {
        for k in config.k_values(method) {
            let models = train_all(config, &scene, &classes, method, k);
            write_models(out, &models)?;
            for m in &models {
                match &m.failure {
                    None => println!("{method} k={k} {}: {:.1} ms", m.class, m.training_time_ms),
                    Some(err) => println!("{method} k={k} {}: failed: {err}", m.class),
                }
            }
        }
    }
    Ok(())
}

fn run_evaluation(config: &ExperimentConfig) -> Result<()> {
    let out = &config.out_dir;
    let scene = config.scene.build()?;
    let (_, classes) = read_dataset(out).context("run `dsvs generate` first")?;
    for &method in &config.methods {
        for k in config.k_values(method) {
            let models = read_models(out, method, k, &classes).context("run `dsvs train` first")?;
            let (report, outputs) = evaluate(config, &scene, &classes, &models)?;
            let path = write_report(out, &report, &outputs)?;
            println!(
                "{method} k={k}: {}/{} runs converged, report at {}",
                report.summary.converged,
                report.summary.runs,
                path.display()
            );
        }
    }
    Ok(())
}

fn report_paths(out_dir: &Path, given: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if !given.is_empty() {
        return Ok(given.to_vec());
    }
    let dir = report_dir(out_dir);
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    paths.sort();
    Ok(paths)
}

fn report(config: &ExperimentConfig, given: &[PathBuf]) -> Result<bool> {
    let paths = report_paths(&config.out_dir, given)?;
    if paths.is_empty() {
        eprintln!("error: no run reports found; pass report paths or run `dsvs evaluate` first");
        return Ok(false);
    }
    let reports = paths.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
    let rows = table(&reports)?;
    print!("{}", render_table(&rows));
    write_summary(&config.out_dir, &rows)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.overrides.resolve().and_then(|config| match &cli.command {
        Command::Generate => {
            let manifest = generate_dataset(&config, &config.out_dir)?;
            let demos: usize = manifest.classes.iter().map(|c| c.demos.len()).sum();
            println!("wrote {} classes, {demos} demonstrations", manifest.classes.len());
            Ok(true)
        }
        Command::Train => train(&config).map(|_| true),
        Command::Evaluate => run_evaluation(&config).map(|_| true),
        Command::Report { reports } => report(&config, reports),
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(true)
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
