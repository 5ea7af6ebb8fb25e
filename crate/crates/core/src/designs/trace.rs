//! Task records, run manifests and the trace audit.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, DesignId, TaskKind};
use crate::cluster::{ClusterSpec, ConcurrencyCaps, NodeId};
use crate::workload::ImageId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Failed,
}

/// One executed task. Times are seconds since the run started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u64,
    pub kind: TaskKind,
    pub image_id: ImageId,
    pub node_id: NodeId,
    pub start_s: f64,
    pub end_s: f64,
    pub outcome: Outcome,
}

impl TaskRecord {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

pub type Trace = Vec<TaskRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalLabel {
    DatasetDiscovery,
    ClientSubmission,
    Setup,
    Distributing,
    Teardown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInterval {
    pub label: IntervalLabel,
    pub start_s: f64,
    pub end_s: f64,
}

impl LabeledInterval {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Everything about a run that is not a task record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub design: DesignId,
    pub backend: Backend,
    pub seed: u64,
    pub images: usize,
    pub total_mb: f64,
    pub workload_fingerprint: String,
    pub cluster: ClusterSpec,
    pub caps: ConcurrencyCaps,
    pub poll_interval_s: f64,
    /// Real seconds per modelled second; set for real-time runs, whose
    /// timestamps are wall-clock seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_scale: Option<f64>,
    pub run_start_s: f64,
    pub run_end_s: f64,
    pub intervals: Vec<LabeledInterval>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// Renders a trace as CSV `task_id,kind,image_id,node_id,start_s,end_s,outcome`.
pub fn trace_csv(trace: &[TaskRecord]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for rec in trace {
        wtr.serialize(rec)?;
    }
    if trace.is_empty() {
        wtr.write_record([
            "task_id", "kind", "image_id", "node_id", "start_s", "end_s", "outcome",
        ])?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Input(format!("trace buffer: {e}")))
}

pub fn parse_trace<R: std::io::Read>(reader: R) -> Result<Trace> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::Input(format!("trace row {}: {e}", i + 1))))
        .collect()
}

pub fn load_trace(path: &Path) -> Result<Trace> {
    parse_trace(crate::io::read_to_string(path)?.as_bytes())
}

pub fn write_trace(path: &Path, trace: &[TaskRecord]) -> Result<()> {
    crate::io::write_atomic(path, &trace_csv(trace)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub images: usize,
    pub records: usize,
    pub failed: usize,
    /// Highest per-node concurrency observed, per kind.
    pub peak_t1: u32,
    pub peak_t2: u32,
}

/// Largest number of simultaneously open intervals. Intervals are
/// half-open, so one ending exactly when another starts does not overlap.
pub(crate) fn peak_concurrency(intervals: impl Iterator<Item = (f64, f64)>) -> u32 {
    let mut events: Vec<(f64, i32)> = intervals.flat_map(|(s, e)| [(s, 1), (e, -1)]).collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut busy = 0i32;
    let mut peak = 0i32;
    for (_, delta) in events {
        busy += delta;
        peak = peak.max(busy);
    }
    peak as u32
}

/// Per-node cap compliance alone; returns the peak concurrency per kind.
pub fn check_caps(
    trace: &[TaskRecord],
    cluster: &ClusterSpec,
    caps: &ConcurrencyCaps,
) -> Result<[u32; 2]> {
    let mut peaks = [0u32; 2];
    for node in &cluster.nodes {
        for (k, kind) in [TaskKind::Tiling, TaskKind::Counting].into_iter().enumerate() {
            let peak = peak_concurrency(
                trace
                    .iter()
                    .filter(|r| r.kind == kind && r.node_id == node.id)
                    .map(|r| (r.start_s, r.end_s)),
            );
            if peak > caps.limit(kind) {
                return Err(Error::Audit(format!(
                    "node {} ran {peak} concurrent {kind} tasks, cap is {}",
                    node.id,
                    caps.limit(kind)
                )));
            }
            peaks[k] = peaks[k].max(peak);
        }
    }
    Ok(peaks)
}

/// Checks a trace for exactly-once processing, data affinity, stage
/// precedence and per-node cap compliance. With `expected`, the set of
/// processed images must equal it.
pub fn audit(
    trace: &[TaskRecord],
    cluster: &ClusterSpec,
    caps: &ConcurrencyCaps,
    expected: Option<&[ImageId]>,
) -> Result<AuditSummary> {
    let mut stages: HashMap<&ImageId, [Option<&TaskRecord>; 2]> = HashMap::new();
    let mut task_ids = std::collections::HashSet::new();
    for rec in trace {
        if !(rec.start_s.is_finite() && rec.end_s.is_finite() && rec.end_s >= rec.start_s) {
            return Err(Error::Audit(format!(
                "task {} ends before it starts ({} > {})",
                rec.task_id, rec.start_s, rec.end_s
            )));
        }
        if cluster.index_of(&rec.node_id).is_none() {
            return Err(Error::Audit(format!(
                "task {} ran on unknown node {}",
                rec.task_id, rec.node_id
            )));
        }
        if !task_ids.insert(rec.task_id) {
            return Err(Error::Audit(format!("task id {} appears twice", rec.task_id)));
        }
        let slot = &mut stages.entry(&rec.image_id).or_default()[match rec.kind {
            TaskKind::Tiling => 0,
            TaskKind::Counting => 1,
        }];
        if slot.is_some() {
            return Err(Error::Audit(format!(
                "image {} has more than one {} record",
                rec.image_id, rec.kind
            )));
        }
        *slot = Some(rec);
    }

    for (image, [t1, t2]) in &stages {
        let (Some(t1), Some(t2)) = (t1, t2) else {
            return Err(Error::Audit(format!(
                "image {image} lacks a {} record",
                if t1.is_none() { "t1" } else { "t2" }
            )));
        };
        if t1.node_id != t2.node_id {
            return Err(Error::Audit(format!(
                "image {image}: t1 on {} but t2 on {}",
                t1.node_id, t2.node_id
            )));
        }
        if t2.start_s < t1.end_s {
            return Err(Error::Audit(format!(
                "image {image}: t2 starts at {} before t1 ends at {}",
                t2.start_s, t1.end_s
            )));
        }
    }

    if let Some(expected) = expected {
        if expected.len() != stages.len() || expected.iter().any(|id| !stages.contains_key(id)) {
            let missing: Vec<_> = expected
                .iter()
                .filter(|id| !stages.contains_key(id))
                .take(5)
                .map(|id| id.0.as_str())
                .collect();
            return Err(Error::Audit(format!(
                "processed {} images, expected {} (missing e.g. {missing:?})",
                stages.len(),
                expected.len()
            )));
        }
    }

    let peaks = check_caps(trace, cluster, caps)?;

    Ok(AuditSummary {
        images: stages.len(),
        records: trace.len(),
        failed: trace.iter().filter(|r| r.outcome == Outcome::Failed).count(),
        peak_t1: peaks[0],
        peak_t2: peaks[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, kind: TaskKind, img: &str, node: &str, s: f64, e: f64) -> TaskRecord {
        TaskRecord {
            task_id: id,
            kind,
            image_id: img.into(),
            node_id: node.into(),
            start_s: s,
            end_s: e,
            outcome: Outcome::Ok,
        }
    }

    fn setup() -> (ClusterSpec, ConcurrencyCaps) {
        (ClusterSpec::homogeneous(2, 32, 2, 128.0), ConcurrencyCaps::default())
    }

    #[test]
    fn clean_trace_passes() {
        let (c, caps) = setup();
        let trace = vec![
            rec(0, TaskKind::Tiling, "a", "node1", 0.0, 1.0),
            rec(1, TaskKind::Counting, "a", "node1", 1.0, 3.0),
            rec(2, TaskKind::Tiling, "b", "node2", 0.0, 2.0),
            rec(3, TaskKind::Counting, "b", "node2", 2.5, 3.0),
        ];
        let s = audit(&trace, &c, &caps, Some(&["a".into(), "b".into()])).unwrap();
        assert_eq!((s.images, s.records, s.peak_t1, s.peak_t2), (2, 4, 1, 1));
    }

    #[test]
    fn detects_each_violation() {
        let (c, caps) = setup();
        let t1 = rec(0, TaskKind::Tiling, "a", "node1", 0.0, 1.0);
        let bad_affinity = vec![t1.clone(), rec(1, TaskKind::Counting, "a", "node2", 1.0, 2.0)];
        let bad_order = vec![t1.clone(), rec(1, TaskKind::Counting, "a", "node1", 0.5, 2.0)];
        let duplicate = vec![
            t1.clone(),
            rec(1, TaskKind::Tiling, "a", "node1", 0.0, 1.0),
            rec(2, TaskKind::Counting, "a", "node1", 1.0, 2.0),
        ];
        let missing = vec![t1.clone()];
        let backwards = vec![rec(0, TaskKind::Tiling, "a", "node1", 2.0, 1.0)];
        for trace in [bad_affinity, bad_order, duplicate, missing, backwards] {
            assert!(matches!(audit(&trace, &c, &caps, None), Err(Error::Audit(_))), "{trace:?}");
        }
        let ok = vec![t1, rec(1, TaskKind::Counting, "a", "node1", 1.0, 2.0)];
        assert!(audit(&ok, &c, &caps, Some(&["a".into(), "b".into()])).is_err());
    }

    #[test]
    fn detects_cap_overrun() {
        let (c, caps) = setup();
        let mut trace = Vec::new();
        for i in 0..4u64 {
            let img = format!("i{i}");
            trace.push(rec(2 * i, TaskKind::Tiling, &img, "node1", 0.0, 1.0));
            trace.push(rec(2 * i + 1, TaskKind::Counting, &img, "node1", 1.0 + i as f64, 2.0 + i as f64));
        }
        let err = audit(&trace, &c, &caps, None).unwrap_err();
        assert!(err.to_string().contains("4 concurrent t1"), "{err}");
    }

    #[test]
    fn back_to_back_tasks_do_not_overlap() {
        assert_eq!(peak_concurrency([(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)].into_iter()), 1);
        assert_eq!(peak_concurrency([(0.0, 2.0), (1.0, 3.0)].into_iter()), 2);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let trace = vec![
            rec(0, TaskKind::Tiling, "a", "node1", 0.0, 1.25),
            rec(1, TaskKind::Counting, "a", "node1", 1.25, 3.5),
        ];
        let bytes = trace_csv(&trace).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "task_id,kind,image_id,node_id,start_s,end_s,outcome"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "0,t1,a,node1,0.0,1.25,ok");
        assert_eq!(parse_trace(bytes.as_slice()).unwrap(), trace);
        assert!(parse_trace(trace_csv(&[]).unwrap().as_slice()).unwrap().is_empty());
    }
}
