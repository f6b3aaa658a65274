//! Parallel benchmark execution and report exports.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use soint_core::eval::{aggregate, run_job, BenchmarkConfig, BenchmarkReport, JobError, Method};
use soint_core::synth::SyntheticEnergy;

/// SHA-256 of the canonical JSON serialization of `cfg`.
pub fn config_hash(cfg: &BenchmarkConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("benchmark config serializes");
    format!("{:x}", Sha256::digest(&bytes))
}

/// Runs every job of the grid on `jobs` worker threads. Jobs are seeded
/// independently and aggregated in sorted order, so the report does not
/// depend on scheduling.
pub fn run_parallel(cfg: &BenchmarkConfig, jobs: usize) -> Result<std::result::Result<BenchmarkReport, JobError>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("cannot start worker threads")?;
    let work = cfg.jobs();
    let outcomes: Vec<_> = pool.install(|| {
        work.par_iter()
            .map(|&job| {
                log::info!("job {} n={} rep={} started", job.energy.name(), job.n, job.repetition);
                let r = run_job(cfg, job);
                log::info!("job {} n={} rep={} finished", job.energy.name(), job.n, job.repetition);
                r
            })
            .collect()
    });
    let mut results = Vec::new();
    for o in outcomes {
        match o {
            Ok(cells) => results.extend(cells),
            Err(e) => return Ok(Err(e)),
        }
    }
    let mut report = aggregate(cfg, results);
    report.meta.config_hash = Some(config_hash(cfg));
    Ok(Ok(report))
}

/// One row per (cell, metric).
pub fn report_csv(report: &BenchmarkReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["energy", "n", "target", "method", "metric", "mean", "std", "values"])?;
    for c in &report.cells {
        for (name, s) in &c.metrics {
            let values: Vec<String> = s.values.iter().map(|v| v.to_string()).collect();
            w.write_record([
                c.energy.name().to_string(),
                c.n.to_string(),
                c.target.to_string(),
                c.method.name().to_string(),
                name.clone(),
                s.mean.to_string(),
                s.std.to_string(),
                values.join(";"),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    /// Input dimension.
    pub x: usize,
    pub y: f64,
    pub band: f64,
}

/// One line of a figure panel: a method's metric against n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub energy: SyntheticEnergy,
    pub target: usize,
    pub metric: String,
    pub method: Method,
    pub points: Vec<PlotPoint>,
}

/// Panels per (energy, target, metric), lines per method, x = n.
pub fn plot_series(report: &BenchmarkReport) -> Vec<PlotSeries> {
    let mut grouped: BTreeMap<(SyntheticEnergy, usize, String, Method), Vec<PlotPoint>> = BTreeMap::new();
    for c in &report.cells {
        for (name, s) in &c.metrics {
            grouped
                .entry((c.energy, c.target, name.clone(), c.method))
                .or_default()
                .push(PlotPoint { x: c.n, y: s.mean, band: s.std });
        }
    }
    grouped
        .into_iter()
        .map(|((energy, target, metric, method), mut points)| {
            points.sort_by_key(|p| p.x);
            PlotSeries { energy, target, metric, method, points }
        })
        .collect()
}

pub fn plot_csv(series: &[PlotSeries]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["energy", "target", "metric", "method", "x", "y", "band"])?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.energy.name().to_string(),
                s.target.to_string(),
                s.metric.clone(),
                s.method.name().to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.band.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
