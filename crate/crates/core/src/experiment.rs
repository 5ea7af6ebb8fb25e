//! Multi-design, multi-seed experiments over one workload.
//!
//! Each (design, seed) pair is an independent run, so the batch is mapped
//! through [`crate::parallel::map`]. Output order is fixed by the plan, not by
//! completion order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::designs::{self, trace_csv, DesignId, RunConfig, RunOutput};
use crate::io::{write_atomic, write_json};
use crate::metrics::{
    build_report, compare_designs, compute_utilization, utilization_csv, ComparisonTable, RunReport,
};
use crate::parallel::{self, ExecutionMode};
use crate::workload::{manifest_bytes, ImageSpec};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub designs: Vec<DesignId>,
    pub seeds: Vec<u64>,
    /// Settings shared by every run; `design` and `seed` are overwritten.
    pub base: RunConfig,
}

impl ExperimentPlan {
    /// All three designs on the reference setup for seeds `0..seeds`.
    pub fn reference(seeds: u64) -> Self {
        ExperimentPlan {
            designs: DesignId::ALL.to_vec(),
            seeds: (0..seeds).collect(),
            base: RunConfig::reference(DesignId::D1, 0),
        }
    }

    pub fn configs(&self) -> Vec<RunConfig> {
        let mut out = Vec::with_capacity(self.designs.len() * self.seeds.len());
        for &seed in &self.seeds {
            for &design in &self.designs {
                out.push(RunConfig {
                    design,
                    seed,
                    ..self.base.clone()
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.designs.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one design and one seed".into()));
        }
        self.configs().iter().try_for_each(RunConfig::validate)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub output: RunOutput,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub design: DesignId,
    pub runs: usize,
    pub ttc_mean_s: f64,
    pub ttc_min_s: f64,
    pub ttc_max_s: f64,
    /// Seeds on which this design had the lowest TTC (ties count for all).
    pub wins: usize,
    pub gpu_mean_pct: f64,
    pub cpu_mean_pct: f64,
    /// Mean over runs that have a balance ratio.
    pub balance_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Seed-major, design-minor, as in [`ExperimentPlan::configs`].
    pub runs: Vec<RunResult>,
    /// One table per seed.
    pub comparisons: BTreeMap<u64, ComparisonTable>,
    pub summary: Vec<DesignSummary>,
}

impl ExperimentResult {
    /// All runs in one table.
    pub fn combined(&self) -> Result<ComparisonTable> {
        let reports: Vec<RunReport> = self.runs.iter().map(|r| r.report.clone()).collect();
        compare_designs(&reports)
    }
}

/// Runs one design on one seed and builds its report.
pub fn run_one(images: &[ImageSpec], config: &RunConfig) -> Result<RunResult> {
    let output = designs::run(images, config)?;
    let report = build_report(&output.trace, &output.manifest, images)?;
    Ok(RunResult { output, report })
}

pub fn run_plan(plan: &ExperimentPlan, images: &[ImageSpec], mode: ExecutionMode) -> Result<ExperimentResult> {
    plan.validate()?;
    let runs = parallel::map(mode, plan.configs(), |cfg| run_one(images, &cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut by_seed: BTreeMap<u64, Vec<RunReport>> = BTreeMap::new();
    for run in &runs {
        by_seed.entry(run.report.seed).or_default().push(run.report.clone());
    }
    let comparisons = by_seed
        .iter()
        .map(|(seed, reports)| Ok((*seed, compare_designs(reports)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let summary = summarize(&plan.designs, &runs, &comparisons);
    Ok(ExperimentResult {
        runs,
        comparisons,
        summary,
    })
}

fn summarize(
    designs: &[DesignId],
    runs: &[RunResult],
    comparisons: &BTreeMap<u64, ComparisonTable>,
) -> Vec<DesignSummary> {
    designs
        .iter()
        .map(|&design| {
            let reports: Vec<&RunReport> = runs
                .iter()
                .map(|r| &r.report)
                .filter(|r| r.design == design)
                .collect();
            let n = reports.len() as f64;
            let ttcs: Vec<f64> = reports.iter().map(|r| r.ttc_s).collect();
            let wins = comparisons
                .values()
                .filter(|t| t.rows.iter().any(|row| row.design == design && row.ttc_delta_s == 0.0))
                .count();
            let balances: Vec<f64> = reports.iter().filter_map(|r| r.balance_ratio).collect();
            DesignSummary {
                design,
                runs: reports.len(),
                ttc_mean_s: ttcs.iter().sum::<f64>() / n,
                ttc_min_s: ttcs.iter().copied().fold(f64::INFINITY, f64::min),
                ttc_max_s: ttcs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                wins,
                gpu_mean_pct: reports.iter().map(|r| r.gpu.mean_pct).sum::<f64>() / n,
                cpu_mean_pct: reports.iter().map(|r| r.cpu.mean_pct).sum::<f64>() / n,
                balance_mean: (!balances.is_empty())
                    .then(|| balances.iter().sum::<f64>() / balances.len() as f64),
            }
        })
        .collect()
}

/// Base name of a run's files, e.g. `d2a-seed3`.
pub fn run_stem(design: DesignId, seed: u64) -> String {
    format!("{design}-seed{seed}")
}

/// Writes one run's trace, manifest, report and utilization timeline into
/// `dir`. Returns the paths written.
pub fn write_run(dir: &Path, run: &RunResult) -> Result<Vec<PathBuf>> {
    let stem = run_stem(run.report.design, run.report.seed);
    let out = &run.output;
    let timelines = compute_utilization(&out.trace, &out.manifest.cluster, &out.manifest.caps)?;
    let trace_path = dir.join(format!("{stem}.trace.csv"));
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    let report_path = dir.join(format!("{stem}.report.json"));
    let util_path = dir.join(format!("{stem}.utilization.csv"));
    write_atomic(&trace_path, &trace_csv(&out.trace)?)?;
    write_json(&manifest_path, &out.manifest)?;
    write_json(&report_path, &run.report)?;
    write_atomic(&util_path, &utilization_csv(&timelines)?)?;
    Ok(vec![trace_path, manifest_path, report_path, util_path])
}

/// Writes the workload, every run, the combined comparison (CSV and text)
/// and the per-design summary.
pub fn write_experiment(dir: &Path, images: &[ImageSpec], result: &ExperimentResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let workload = dir.join("workload.csv");
    write_atomic(&workload, &manifest_bytes(images)?)?;
    written.push(workload);
    for run in &result.runs {
        written.extend(write_run(dir, run)?);
    }
    let table = result.combined()?;
    let csv_path = dir.join("comparison.csv");
    let txt_path = dir.join("comparison.txt");
    let summary_path = dir.join("summary.json");
    write_atomic(&csv_path, &table.to_csv()?)?;
    write_atomic(&txt_path, table.render_text().as_bytes())?;
    write_json(&summary_path, &result.summary)?;
    written.extend([csv_path, txt_path, summary_path]);
    Ok(written)
}
