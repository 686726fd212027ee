//! Subcommands: read inputs, run an experiment, write files.

use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, Setup};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, CompareRow};
use crate::io;

fn out_path(cfg: &ExperimentConfig, name: impl AsRef<Path>) -> CliResult<PathBuf> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    Ok(cfg.out.join(name))
}

/// Writes `trajectory_seed<S>.csv` per seed.
pub fn simulate(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let setup = cfg.setup()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let t = experiment::simulate(cfg, &setup, seed)?;
        let path = out_path(cfg, format!("trajectory_seed{seed}.csv"))?;
        io::write_trajectory(&path, &t)?;
        written.push(path);
    }
    Ok(written)
}

fn write_run(
    cfg: &ExperimentConfig,
    setup: &Setup,
    t: &ares_core::Trajectory,
    tag: &str,
) -> CliResult<Vec<PathBuf>> {
    let run = experiment::estimate(cfg, setup, t, &setup.constraints())?;
    let metrics = out_path(cfg, format!("metrics{tag}.csv"))?;
    io::write_metrics(&metrics, &run.metrics)?;
    let steps = out_path(cfg, format!("steps{tag}.jsonl"))?;
    io::write_steps(&steps, &run.steps)?;
    Ok(vec![metrics, steps])
}

/// Runs the filter over `trajectory`, or over a fresh simulation per seed,
/// writing a metrics CSV and a JSON-lines step log.
pub fn estimate(cfg: &ExperimentConfig, trajectory: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let setup = cfg.setup()?;
    match trajectory {
        Some(path) => {
            let t = io::read_trajectory(path, cfg.seeds[0])?;
            write_run(cfg, &setup, &t, "")
        }
        None => {
            let mut written = Vec::new();
            for &seed in &cfg.seeds {
                let t = experiment::simulate(cfg, &setup, seed)?;
                written.extend(write_run(cfg, &setup, &t, &format!("_seed{seed}"))?);
            }
            Ok(written)
        }
    }
}

/// Writes a detection CSV next to the other outputs, named after the log.
pub fn detect(cfg: &ExperimentConfig, steps: &Path) -> CliResult<PathBuf> {
    let log = io::read_steps(steps)?;
    let rows = experiment::detect(&log, cfg.alpha)?;
    let stem = steps
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("steps");
    let name = match stem.strip_prefix("steps") {
        Some(rest) => format!("detection{rest}.csv"),
        None => format!("detection_{stem}.csv"),
    };
    let path = out_path(cfg, name)?;
    io::write_detection(&path, &rows)?;
    Ok(path)
}

/// Writes `mse.csv` and `stability.json`. With `runs`, the seeds are
/// `seeds[0], seeds[0] + 1, …`.
pub fn montecarlo(cfg: &ExperimentConfig, runs: Option<usize>) -> CliResult<Vec<PathBuf>> {
    let seeds: Vec<u64> = match runs {
        Some(0) => return Err(CliError::Config("--runs must be at least 1".into())),
        Some(n) => (0..n as u64).map(|i| cfg.seeds[0] + i).collect(),
        None => cfg.seeds.clone(),
    };
    let setup = cfg.setup()?;
    let report = experiment::montecarlo(cfg, &setup, &seeds)?;
    let curve = out_path(cfg, "mse.csv")?;
    let header: Vec<String> = ["k", "mse_x", "mse_d"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = report
        .mse_x
        .iter()
        .zip(&report.mse_d)
        .enumerate()
        .map(|(k, (x, d))| vec![k.to_string(), io::fmt_f64(*x), io::fmt_f64(*d)]);
    io::write_csv(&curve, &header, rows)?;
    let summary = out_path(cfg, "stability.json")?;
    io::write_json(&summary, &report)?;
    Ok(vec![curve, summary])
}

/// Writes `compare_seed<S>.csv` and `compare_seed<S>.json` per seed.
pub fn compare(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let setup = cfg.setup()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let t = experiment::simulate(cfg, &setup, seed)?;
        let (rows, summary) = experiment::compare(cfg, &setup, &t)?;
        let table = out_path(cfg, format!("compare_seed{seed}.csv"))?;
        let header: Vec<String> = CompareRow::HEADER.iter().map(|s| s.to_string()).collect();
        io::write_csv(&table, &header, rows.iter().map(CompareRow::record))?;
        let json = out_path(cfg, format!("compare_seed{seed}.json"))?;
        io::write_json(&json, &summary)?;
        written.extend([table, json]);
    }
    Ok(written)
}
