//! The three workflow designs and the configuration shared by both
//! execution backends.
//!
//! * [`DesignId::D1`]: one two-stage pipeline per image. Tiling runs on the
//!   first node with a free CPU slot; the counting task is pinned to the
//!   same node.
//! * [`DesignId::D2`]: per-node pools of long-running tiling and counting
//!   workers. Tiling workers pull from one global image queue and push tile
//!   sets to their node's tile queue.
//! * [`DesignId::D2A`]: as D2, but images are partitioned across nodes up
//!   front and each node pulls from its own image queue.

mod partition;
mod realtime;
mod sim;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterSpec, ConcurrencyCaps, NodeId};
use crate::perfmodel::ModelRegistry;
use crate::protocol::DEFAULT_POLL_INTERVAL_S;
use crate::workload::{ImageId, ImageSpec};
use crate::{Error, Result};

pub use partition::{partition, partition_balanced, partition_stratified, PartitionStrategy};
pub use trace::{
    audit, check_caps, load_trace, parse_trace, trace_csv, write_trace, AuditSummary, IntervalLabel, LabeledInterval, Outcome,
    RunManifest, TaskRecord, Trace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignId {
    D1,
    D2,
    D2A,
}

impl DesignId {
    pub const ALL: [DesignId; 3] = [DesignId::D1, DesignId::D2, DesignId::D2A];

    pub fn as_str(self) -> &'static str {
        match self {
            DesignId::D1 => "d1",
            DesignId::D2 => "d2",
            DesignId::D2A => "d2a",
        }
    }

    fn salt(self) -> u64 {
        match self {
            DesignId::D1 => 0x9e37_79b9_7f4a_7c15,
            DesignId::D2 => 0xbf58_476d_1ce4_e5b9,
            DesignId::D2A => 0x94d0_49bb_1331_11eb,
        }
    }
}

impl fmt::Display for DesignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(DesignId::D1),
            "d2" => Ok(DesignId::D2),
            "d2a" | "d2.a" => Ok(DesignId::D2A),
            _ => Err(Error::Config(format!(
                "unknown design `{s}` (expected d1, d2 or d2a)"
            ))),
        }
    }
}

/// Tiling (T1, CPU) turns an image into a tile set; counting (T2, GPU)
/// turns a tile set into a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "t1")]
    Tiling,
    #[serde(rename = "t2")]
    Counting,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Tiling => "t1",
            TaskKind::Counting => "t2",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t1" | "T1" | "tiling" => Ok(TaskKind::Tiling),
            "t2" | "T2" | "counting" => Ok(TaskKind::Counting),
            _ => Err(Error::Input(format!("unknown task kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Deterministic discrete-event simulation.
    #[default]
    #[serde(alias = "simulated")]
    Sim,
    /// Real threads sleeping for scaled task durations.
    Realtime,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" | "simulated" => Ok(Backend::Sim),
            "realtime" | "real" => Ok(Backend::Realtime),
            _ => Err(Error::Config(format!(
                "unknown backend `{s}` (expected sim or realtime)"
            ))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Sim => "sim",
            Backend::Realtime => "realtime",
        })
    }
}

/// Relative speed of a node. Task durations are divided by the factor, so
/// 2.0 runs twice as fast. A bare number in JSON sets the CPU factor only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpeedRepr")]
pub struct NodeSpeed {
    pub cpu: f64,
    pub gpu: f64,
}

impl Default for NodeSpeed {
    fn default() -> Self {
        NodeSpeed { cpu: 1.0, gpu: 1.0 }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpeedRepr {
    Cpu(f64),
    Both {
        #[serde(default = "one")]
        cpu: f64,
        #[serde(default = "one")]
        gpu: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl From<SpeedRepr> for NodeSpeed {
    fn from(r: SpeedRepr) -> Self {
        match r {
            SpeedRepr::Cpu(cpu) => NodeSpeed { cpu, gpu: 1.0 },
            SpeedRepr::Both { cpu, gpu } => NodeSpeed { cpu, gpu },
        }
    }
}

impl NodeSpeed {
    pub fn factor(&self, kind: TaskKind) -> f64 {
        match kind {
            TaskKind::Tiling => self.cpu,
            TaskKind::Counting => self.gpu,
        }
    }
}

/// Non-task intervals. The simulator injects these as constants; the
/// real-time backend measures its own and ignores everything here except
/// the per-worker terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Overheads {
    /// Listing the dataset, per image.
    pub discovery_per_image_s: f64,
    pub client_submission_s: f64,
    /// Queue setup and worker start-up (Designs 2 and 2.A).
    pub setup_s: f64,
    /// Partitioning and preloading per-node image queues (Design 2.A).
    pub distributing_s: f64,
    pub worker_bootstrap_s: f64,
    pub worker_teardown_s: f64,
    pub teardown_s: f64,
}

impl Default for Overheads {
    fn default() -> Self {
        Overheads {
            discovery_per_image_s: 0.001,
            client_submission_s: 0.0,
            setup_s: 30.0,
            distributing_s: 7.5,
            worker_bootstrap_s: 0.0,
            worker_teardown_s: 0.0,
            teardown_s: 0.0,
        }
    }
}

impl Overheads {
    pub fn zero() -> Self {
        Overheads {
            discovery_per_image_s: 0.0,
            client_submission_s: 0.0,
            setup_s: 0.0,
            distributing_s: 0.0,
            worker_bootstrap_s: 0.0,
            worker_teardown_s: 0.0,
            teardown_s: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.discovery_per_image_s,
            self.client_submission_s,
            self.setup_s,
            self.distributing_s,
            self.worker_bootstrap_s,
            self.worker_teardown_s,
            self.teardown_s,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("overheads must be non-negative: {self:?}")))
        }
    }
}

/// Everything needed to execute one design on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub design: DesignId,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub caps: ConcurrencyCaps,
    #[serde(default = "ModelRegistry::reference")]
    pub models: ModelRegistry,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_poll")]
    pub poll_interval_s: f64,
    #[serde(default)]
    pub speed_multipliers: BTreeMap<NodeId, NodeSpeed>,
    #[serde(default)]
    pub overheads: Overheads,
    #[serde(default)]
    pub partition: PartitionStrategy,
    /// Which task's model drives the Design 2.A partitioner.
    #[serde(default = "default_partition_kind")]
    pub partition_by: TaskKind,
    /// Real seconds slept per modelled second (real-time backend only).
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
}

fn default_poll() -> f64 {
    DEFAULT_POLL_INTERVAL_S
}

fn default_partition_kind() -> TaskKind {
    TaskKind::Counting
}

fn default_time_scale() -> f64 {
    1e-3
}

impl RunConfig {
    /// Reference setup: 4 nodes x (32 cores, 2 GPUs, 128 GB), caps (3, 2),
    /// fitted models with noise, default overheads, simulated backend.
    pub fn reference(design: DesignId, seed: u64) -> Self {
        RunConfig {
            design,
            cluster: ClusterSpec::reference(),
            caps: ConcurrencyCaps::default(),
            models: ModelRegistry::reference(),
            seed,
            backend: Backend::Sim,
            poll_interval_s: DEFAULT_POLL_INTERVAL_S,
            speed_multipliers: BTreeMap::new(),
            overheads: Overheads::default(),
            partition: PartitionStrategy::default(),
            partition_by: TaskKind::Counting,
            time_scale: default_time_scale(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.caps.validate_for_cluster(&self.cluster)?;
        self.models.get(self.design, TaskKind::Tiling)?.validate()?;
        self.models.get(self.design, TaskKind::Counting)?.validate()?;
        self.overheads.validate()?;
        if !(self.poll_interval_s > 0.0 && self.poll_interval_s.is_finite()) {
            return Err(Error::Config(format!(
                "poll interval must be positive, got {}",
                self.poll_interval_s
            )));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(Error::Config("time_scale must be positive".into()));
        }
        for (node, speed) in &self.speed_multipliers {
            if self.cluster.index_of(node).is_none() {
                return Err(Error::Config(format!("speed multiplier for unknown node {node}")));
            }
            if !(speed.cpu > 0.0 && speed.gpu > 0.0 && speed.cpu.is_finite() && speed.gpu.is_finite()) {
                return Err(Error::Config(format!("speed multipliers for {node} must be positive")));
            }
        }
        Ok(())
    }

    pub(crate) fn speeds(&self) -> Vec<NodeSpeed> {
        self.cluster
            .nodes
            .iter()
            .map(|n| self.speed_multipliers.get(&n.id).copied().unwrap_or_default())
            .collect()
    }

    /// RNG seed of this run, distinct per design for the same user seed.
    pub(crate) fn rng_seed(&self) -> u64 {
        self.seed ^ self.design.salt()
    }
}

/// Descriptor pushed through the tile queues. Tiles themselves are not
/// materialised; the image size is all the counting model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSet {
    pub image_id: ImageId,
    pub size_mb: f64,
}

pub(crate) fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    serde_json::to_vec(msg).expect("descriptor serialization cannot fail")
}

pub(crate) fn decode<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Protocol(format!("bad payload: {e}")))
}

/// Lifecycle of a Design 1 pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineState {
    Pending,
    TilingRunning,
    TilingDone,
    CountingRunning,
    Done,
}

/// One image's two-stage pipeline. The counting stage inherits the node the
/// tiling stage ran on.
#[derive(Debug, Clone)]
pub struct PipelineInstance {
    pub image: ImageSpec,
    pub state: PipelineState,
    pub bound_node: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub manifest: RunManifest,
}

fn check_workload(images: &[ImageSpec]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Config("workload is empty".into()));
    }
    crate::workload::validate_images(images)
}

/// Executes `config.design` on `images` with the configured backend.
pub fn run(images: &[ImageSpec], config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    check_workload(images)?;
    match config.backend {
        Backend::Sim => sim::run(images, config),
        Backend::Realtime => realtime::run(images, config),
    }
}

fn run_as(design: DesignId, images: &[ImageSpec], config: &RunConfig) -> Result<RunOutput> {
    let config = RunConfig {
        design,
        ..config.clone()
    };
    run(images, &config)
}

pub fn run_design1(images: &[ImageSpec], config: &RunConfig) -> Result<RunOutput> {
    run_as(DesignId::D1, images, config)
}

pub fn run_design2(images: &[ImageSpec], config: &RunConfig) -> Result<RunOutput> {
    run_as(DesignId::D2, images, config)
}

pub fn run_design2a(images: &[ImageSpec], config: &RunConfig) -> Result<RunOutput> {
    run_as(DesignId::D2A, images, config)
}
