//! Post-processing of traces: utilization timelines, time to completion,
//! overhead breakdowns, per-run reports and cross-design comparison.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::{theoretical_max_utilization, ClusterSpec, ConcurrencyCaps, NodeId};
use crate::designs::{
    audit, check_caps, AuditSummary, Backend, DesignId, IntervalLabel, RunManifest, TaskKind,
    TaskRecord,
};
use crate::workload::{ImageId, ImageSpec};
use crate::{Error, Result};

/// Busy-slot count of one task kind over time, as a step function: `busy`
/// holds from `t_s` until the next point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPoint {
    pub t_s: f64,
    pub busy: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationTimeline {
    pub kind: TaskKind,
    /// Cores (tiling) or GPUs (counting) across the cluster.
    pub total_units: u64,
    /// Cap-permitted concurrent tasks across the cluster.
    pub cap_slots: u64,
    pub points: Vec<StepPoint>,
}

impl UtilizationTimeline {
    pub fn percent(&self, busy: u32) -> f64 {
        if self.total_units == 0 {
            0.0
        } else {
            100.0 * f64::from(busy) / self.total_units as f64
        }
    }

    /// Integral of the busy count over time, in slot-seconds.
    pub fn busy_integral(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| f64::from(w[0].busy) * (w[1].t_s - w[0].t_s))
            .sum()
    }

    pub fn peak_busy(&self) -> u32 {
        self.points.iter().map(|p| p.busy).max().unwrap_or(0)
    }

    /// Time-weighted mean utilization over `[start, end]`, percent of units.
    pub fn mean_percent(&self, start: f64, end: f64) -> f64 {
        let span = end - start;
        if span <= 0.0 || self.total_units == 0 {
            return 0.0;
        }
        100.0 * self.busy_integral() / (span * self.total_units as f64)
    }

    /// Time-weighted mean over `[start, end]`, percent of cap slots.
    pub fn mean_cap_percent(&self, start: f64, end: f64) -> f64 {
        let span = end - start;
        if span <= 0.0 || self.cap_slots == 0 {
            return 0.0;
        }
        100.0 * self.busy_integral() / (span * self.cap_slots as f64)
    }
}

fn sweep(trace: &[TaskRecord], kind: TaskKind) -> Vec<StepPoint> {
    let mut events: Vec<(f64, i64)> = trace
        .iter()
        .filter(|r| r.kind == kind)
        .flat_map(|r| [(r.start_s, 1), (r.end_s, -1)])
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut points: Vec<StepPoint> = Vec::new();
    let mut busy = 0i64;
    for (t, delta) in events {
        busy += delta;
        match points.last_mut() {
            Some(last) if last.t_s == t => last.busy = busy as u32,
            _ => points.push(StepPoint {
                t_s: t,
                busy: busy as u32,
            }),
        }
    }
    points
}

/// Sweeps task starts and ends into one timeline per kind (tiling, then
/// counting). Fails if the trace breaks a per-node cap.
pub fn compute_utilization(
    trace: &[TaskRecord],
    cluster: &ClusterSpec,
    caps: &ConcurrencyCaps,
) -> Result<[UtilizationTimeline; 2]> {
    check_caps(trace, cluster, caps)?;
    let n = cluster.len() as u64;
    Ok([
        UtilizationTimeline {
            kind: TaskKind::Tiling,
            total_units: cluster.total_cpus(),
            cap_slots: n * u64::from(caps.max_t1_per_node),
            points: sweep(trace, TaskKind::Tiling),
        },
        UtilizationTimeline {
            kind: TaskKind::Counting,
            total_units: cluster.total_gpus(),
            cap_slots: n * u64::from(caps.max_t2_per_node),
            points: sweep(trace, TaskKind::Counting),
        },
    ])
}

/// CSV `t_s,kind,busy,percent` with `kind` as `cpu` or `gpu`.
pub fn utilization_csv(timelines: &[UtilizationTimeline]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["t_s", "kind", "busy", "percent"])?;
    for tl in timelines {
        let kind = match tl.kind {
            TaskKind::Tiling => "cpu",
            TaskKind::Counting => "gpu",
        };
        for p in &tl.points {
            wtr.write_record([
                p.t_s.to_string(),
                kind.to_string(),
                p.busy.to_string(),
                tl.percent(p.busy).to_string(),
            ])?;
        }
    }
    wtr.into_inner()
        .map_err(|e| Error::Input(format!("utilization buffer: {e}")))
}

/// Wall span of the run: from the earliest labelled interval or task start
/// to the latest end, teardown included.
pub fn compute_ttc(trace: &[TaskRecord], manifest: &RunManifest) -> f64 {
    let starts = trace
        .iter()
        .map(|r| r.start_s)
        .chain(manifest.intervals.iter().map(|i| i.start_s))
        .chain([manifest.run_start_s]);
    let ends = trace
        .iter()
        .map(|r| r.end_s)
        .chain(manifest.intervals.iter().map(|i| i.end_s))
        .chain([manifest.run_end_s]);
    let start = starts.fold(f64::INFINITY, f64::min);
    let end = ends.fold(f64::NEG_INFINITY, f64::max);
    (end - start).max(0.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverheadBreakdown {
    pub dataset_discovery: f64,
    pub client_submission: f64,
    pub setup: f64,
    pub distributing: f64,
    pub teardown: f64,
}

impl OverheadBreakdown {
    pub fn total(&self) -> f64 {
        self.dataset_discovery + self.client_submission + self.setup + self.distributing + self.teardown
    }
}

pub fn compute_overheads(manifest: &RunManifest) -> OverheadBreakdown {
    let mut out = OverheadBreakdown::default();
    for interval in &manifest.intervals {
        let d = interval.duration().max(0.0);
        match interval.label {
            IntervalLabel::DatasetDiscovery => out.dataset_discovery += d,
            IntervalLabel::ClientSubmission => out.client_submission += d,
            IntervalLabel::Setup => out.setup += d,
            IntervalLabel::Distributing => out.distributing += d,
            IntervalLabel::Teardown => out.teardown += d,
        }
    }
    out
}

/// Stretches of the run covered by neither a task nor a labelled interval
/// and longer than `tolerance` seconds.
pub fn unlabeled_gaps(trace: &[TaskRecord], manifest: &RunManifest, tolerance: f64) -> Vec<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = trace
        .iter()
        .map(|r| (r.start_s, r.end_s))
        .chain(manifest.intervals.iter().map(|i| (i.start_s, i.end_s)))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gaps = Vec::new();
    let mut covered = manifest.run_start_s;
    for (s, e) in spans {
        if s - covered > tolerance {
            gaps.push((covered, s));
        }
        covered = covered.max(e);
    }
    if manifest.run_end_s - covered > tolerance {
        gaps.push((covered, manifest.run_end_s));
    }
    gaps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSummary {
    /// Time-weighted mean over the whole run, percent of units.
    pub mean_pct: f64,
    /// Time-weighted mean, percent of cap-permitted slots.
    pub mean_cap_pct: f64,
    pub peak_pct: f64,
    /// Cap-based ceiling, percent of units (homogeneous clusters only).
    pub theoretical_max_pct: Option<f64>,
    /// Total task-seconds of this kind.
    pub busy_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLoad {
    pub node: NodeId,
    pub images: usize,
    pub mb: f64,
    pub counting_busy_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub design: DesignId,
    pub seed: u64,
    pub backend: Backend,
    pub images: usize,
    pub total_mb: f64,
    pub workload_fingerprint: String,
    pub cluster: ClusterSpec,
    pub ttc_s: f64,
    pub cpu: UtilizationSummary,
    pub gpu: UtilizationSummary,
    pub overheads: OverheadBreakdown,
    /// Overhead total divided by TTC.
    pub overhead_fraction: f64,
    pub nodes: Vec<NodeLoad>,
    /// Max over min processed MB per node; `None` if some node processed
    /// nothing.
    pub balance_ratio: Option<f64>,
    pub audit: AuditSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Gaps shorter than this many poll intervals are expected (a worker only
/// notices termination on its next pull).
const GAP_TOLERANCE_POLLS: f64 = 2.0;

/// Audits the trace against `images` and summarises the run.
pub fn build_report(trace: &[TaskRecord], manifest: &RunManifest, images: &[ImageSpec]) -> Result<RunReport> {
    let ids: Vec<ImageId> = images.iter().map(|i| i.id.clone()).collect();
    let summary = audit(trace, &manifest.cluster, &manifest.caps, Some(&ids))?;
    let [cpu_tl, gpu_tl] = compute_utilization(trace, &manifest.cluster, &manifest.caps)?;
    let ttc = compute_ttc(trace, manifest);
    let start = manifest.run_start_s;
    let end = start + ttc;
    let theoretical = theoretical_max_utilization(&manifest.cluster, &manifest.caps).ok();
    let summarize = |tl: &UtilizationTimeline, max: Option<f64>| UtilizationSummary {
        mean_pct: tl.mean_percent(start, end),
        mean_cap_pct: tl.mean_cap_percent(start, end),
        peak_pct: tl.percent(tl.peak_busy()),
        theoretical_max_pct: max.map(|m| 100.0 * m),
        busy_s: tl.busy_integral(),
    };

    let sizes: HashMap<&ImageId, f64> = images.iter().map(|i| (&i.id, i.size_mb)).collect();
    let mut loads: BTreeMap<usize, NodeLoad> = manifest
        .cluster
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            (
                i,
                NodeLoad {
                    node: n.id.clone(),
                    images: 0,
                    mb: 0.0,
                    counting_busy_s: 0.0,
                },
            )
        })
        .collect();
    for rec in trace.iter().filter(|r| r.kind == TaskKind::Counting) {
        let i = manifest.cluster.index_of(&rec.node_id).expect("audited");
        let load = loads.get_mut(&i).expect("every node has an entry");
        load.images += 1;
        load.mb += sizes[&rec.image_id];
        load.counting_busy_s += rec.duration();
    }
    let nodes: Vec<NodeLoad> = loads.into_values().collect();
    let max_mb = nodes.iter().map(|n| n.mb).fold(0.0, f64::max);
    let min_mb = nodes.iter().map(|n| n.mb).fold(f64::INFINITY, f64::min);
    let balance_ratio = (min_mb > 0.0).then(|| max_mb / min_mb);

    let overheads = compute_overheads(manifest);
    let mut warnings = Vec::new();
    let tolerance = GAP_TOLERANCE_POLLS * manifest.poll_interval_s;
    for (s, e) in unlabeled_gaps(trace, manifest, tolerance) {
        warnings.push(format!("unlabelled idle interval [{s:.3}, {e:.3}] s"));
    }

    Ok(RunReport {
        design: manifest.design,
        seed: manifest.seed,
        backend: manifest.backend,
        images: manifest.images,
        total_mb: manifest.total_mb,
        workload_fingerprint: manifest.workload_fingerprint.clone(),
        cluster: manifest.cluster.clone(),
        ttc_s: ttc,
        cpu: summarize(&cpu_tl, theoretical.map(|t| t.0)),
        gpu: summarize(&gpu_tl, theoretical.map(|t| t.1)),
        overhead_fraction: if ttc > 0.0 { overheads.total() / ttc } else { 0.0 },
        overheads,
        nodes,
        balance_ratio,
        audit: summary,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub design: DesignId,
    pub seed: u64,
    pub ttc_s: f64,
    /// TTC minus the lowest TTC in the table.
    pub ttc_delta_s: f64,
    pub cpu_mean_pct: f64,
    pub gpu_mean_pct: f64,
    pub cpu_peak_pct: f64,
    pub gpu_peak_pct: f64,
    pub overhead_s: f64,
    pub balance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Tabulates reports that ran on the same workload and cluster.
pub fn compare_designs(reports: &[RunReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Comparison("no reports to compare".into()))?;
    for r in &reports[1..] {
        if r.workload_fingerprint != first.workload_fingerprint {
            return Err(Error::Comparison(format!(
                "{} seed {} ran on a different workload than {} seed {}",
                r.design, r.seed, first.design, first.seed
            )));
        }
        if r.cluster != first.cluster {
            return Err(Error::Comparison(format!(
                "{} seed {} ran on a different cluster",
                r.design, r.seed
            )));
        }
    }
    let best = reports.iter().map(|r| r.ttc_s).fold(f64::INFINITY, f64::min);
    Ok(ComparisonTable {
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                design: r.design,
                seed: r.seed,
                ttc_s: r.ttc_s,
                ttc_delta_s: r.ttc_s - best,
                cpu_mean_pct: r.cpu.mean_pct,
                gpu_mean_pct: r.gpu.mean_pct,
                cpu_peak_pct: r.cpu.peak_pct,
                gpu_peak_pct: r.gpu.peak_pct,
                overhead_s: r.overheads.total(),
                balance_ratio: r.balance_ratio,
            })
            .collect(),
    })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.into_inner()
            .map_err(|e| Error::Input(format!("comparison buffer: {e}")))
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>12} {:>10} {:>8} {:>8} {:>8} {:>8} {:>10} {:>8}",
            "design", "seed", "ttc_s", "delta_s", "cpu%", "gpu%", "cpu_pk%", "gpu_pk%", "overhd_s", "balance"
        );
        for r in &self.rows {
            let balance = r
                .balance_ratio
                .map_or_else(|| "-".to_string(), |b| format!("{b:.4}"));
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>12.1} {:>10.1} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>10.2} {:>8}",
                r.design.as_str(),
                r.seed,
                r.ttc_s,
                r.ttc_delta_s,
                r.cpu_mean_pct,
                r.gpu_mean_pct,
                r.cpu_peak_pct,
                r.gpu_peak_pct,
                r.overhead_s,
                balance
            );
        }
        out
    }
}
