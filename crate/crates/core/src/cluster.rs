//! Compute nodes, per-node concurrency caps and the slot ledger through
//! which both execution backends acquire resources.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::designs::TaskKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub cpu_cores: u32,
    pub gpus: u32,
    pub memory_gb: f64,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cpu_cores == 0 {
            return Err(Error::Config(format!("node {} has no CPU cores", self.id)));
        }
        if self.gpus > self.cpu_cores {
            return Err(Error::Config(format!(
                "node {} has more GPUs ({}) than CPU cores ({})",
                self.id, self.gpus, self.cpu_cores
            )));
        }
        if !(self.memory_gb > 0.0 && self.memory_gb.is_finite()) {
            return Err(Error::Config(format!("node {} needs positive memory", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub nodes: Vec<NodeSpec>,
}

impl ClusterSpec {
    /// `n` identical nodes named `node1..=noden`.
    pub fn homogeneous(n: usize, cpu_cores: u32, gpus: u32, memory_gb: f64) -> Self {
        ClusterSpec {
            nodes: (1..=n)
                .map(|i| NodeSpec {
                    id: NodeId(format!("node{i}")),
                    cpu_cores,
                    gpus,
                    memory_gb,
                })
                .collect(),
        }
    }

    /// Four nodes with 32 cores, 2 GPUs and 128 GB each.
    pub fn reference() -> Self {
        Self::homogeneous(4, 32, 2, 128.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_cpus(&self) -> u64 {
        self.nodes.iter().map(|n| u64::from(n.cpu_cores)).sum()
    }

    pub fn total_gpus(&self) -> u64 {
        self.nodes.iter().map(|n| u64::from(n.gpus)).sum()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.nodes.windows(2).all(|w| {
            w[0].cpu_cores == w[1].cpu_cores
                && w[0].gpus == w[1].gpus
                && w[0].memory_gb == w[1].memory_gb
        })
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| &n.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Config("cluster has no nodes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for node in &self.nodes {
            node.validate()?;
            if !seen.insert(&node.id) {
                return Err(Error::Config(format!("duplicate node id {}", node.id)));
            }
        }
        Ok(())
    }
}

/// Per-node limits on concurrently running tasks of each kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcurrencyCaps {
    pub max_t1_per_node: u32,
    pub max_t2_per_node: u32,
    pub mem_per_t1_gb: f64,
    pub mem_per_t2_gb: f64,
}

impl Default for ConcurrencyCaps {
    /// Three tiling tasks (memory bound) and two counting tasks (one per GPU)
    /// per node.
    fn default() -> Self {
        ConcurrencyCaps {
            max_t1_per_node: 3,
            max_t2_per_node: 2,
            mem_per_t1_gb: 40.0,
            mem_per_t2_gb: 4.0,
        }
    }
}

impl ConcurrencyCaps {
    pub fn limit(&self, kind: TaskKind) -> u32 {
        match kind {
            TaskKind::Tiling => self.max_t1_per_node,
            TaskKind::Counting => self.max_t2_per_node,
        }
    }

    /// Checks the caps fit on `node`.
    pub fn validate_for(&self, node: &NodeSpec) -> Result<()> {
        if self.max_t1_per_node == 0 || self.max_t2_per_node == 0 {
            return Err(Error::Config("concurrency caps must be at least 1".into()));
        }
        if self.max_t1_per_node > node.cpu_cores {
            return Err(Error::Config(format!(
                "{} concurrent tiling tasks exceed the {} cores of node {}",
                self.max_t1_per_node, node.cpu_cores, node.id
            )));
        }
        if self.max_t2_per_node > node.gpus {
            return Err(Error::Config(format!(
                "{} concurrent counting tasks exceed the {} GPUs of node {}",
                self.max_t2_per_node, node.gpus, node.id
            )));
        }
        let mem = f64::from(self.max_t1_per_node) * self.mem_per_t1_gb
            + f64::from(self.max_t2_per_node) * self.mem_per_t2_gb;
        if mem > node.memory_gb {
            return Err(Error::Config(format!(
                "caps need {mem} GB but node {} has {} GB",
                node.id, node.memory_gb
            )));
        }
        Ok(())
    }

    pub fn validate_for_cluster(&self, cluster: &ClusterSpec) -> Result<()> {
        cluster.validate()?;
        cluster.nodes.iter().try_for_each(|n| self.validate_for(n))
    }
}

/// Cluster plus caps, the JSON cluster config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub caps: ConcurrencyCaps,
}

impl ClusterConfig {
    pub fn reference() -> Self {
        ClusterConfig {
            nodes: ClusterSpec::reference().nodes,
            caps: ConcurrencyCaps::default(),
        }
    }

    pub fn cluster(&self) -> ClusterSpec {
        ClusterSpec {
            nodes: self.nodes.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ClusterConfig = crate::io::read_json(path)?;
        cfg.caps.validate_for_cluster(&cfg.cluster())?;
        Ok(cfg)
    }
}

/// Per-node cap-based upper bound on utilization as fractions of cores and
/// GPUs. Only defined for homogeneous clusters.
pub fn theoretical_max_utilization(
    cluster: &ClusterSpec,
    caps: &ConcurrencyCaps,
) -> Result<(f64, f64)> {
    cluster.validate()?;
    if !cluster.is_homogeneous() {
        return Err(Error::Unsupported(
            "theoretical utilization needs identical nodes".into(),
        ));
    }
    let node = &cluster.nodes[0];
    let cpu = f64::from(caps.max_t1_per_node) / f64::from(node.cpu_cores);
    let gpu = if node.gpus == 0 {
        0.0
    } else {
        f64::from(caps.max_t2_per_node) / f64::from(node.gpus)
    };
    Ok((cpu, gpu))
}

/// Busy slot counts per node and task kind. Mutated by a single owner; see
/// [`SharedLedger`] for concurrent callers.
#[derive(Debug, Clone)]
pub struct SlotLedger {
    caps: ConcurrencyCaps,
    index: HashMap<NodeId, usize>,
    busy: Vec<[u32; 2]>,
}

fn slot(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Tiling => 0,
        TaskKind::Counting => 1,
    }
}

impl SlotLedger {
    pub fn new(cluster: &ClusterSpec, caps: ConcurrencyCaps) -> Self {
        SlotLedger {
            caps,
            index: cluster
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.id.clone(), i))
                .collect(),
            busy: vec![[0, 0]; cluster.nodes.len()],
        }
    }

    fn node_index(&self, node: &NodeId) -> Result<usize> {
        self.index
            .get(node)
            .copied()
            .ok_or_else(|| Error::Input(format!("unknown node {node}")))
    }

    /// Grants a slot if the node is below its cap for `kind`. A denial leaves
    /// the ledger unchanged.
    pub fn try_acquire(&mut self, node: &NodeId, kind: TaskKind) -> Result<bool> {
        let i = self.node_index(node)?;
        Ok(self.try_acquire_at(i, kind))
    }

    pub fn release(&mut self, node: &NodeId, kind: TaskKind) -> Result<()> {
        let i = self.node_index(node)?;
        self.release_at(i, kind)
    }

    pub(crate) fn try_acquire_at(&mut self, node: usize, kind: TaskKind) -> bool {
        let count = &mut self.busy[node][slot(kind)];
        if *count < self.caps.limit(kind) {
            *count += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn release_at(&mut self, node: usize, kind: TaskKind) -> Result<()> {
        let count = &mut self.busy[node][slot(kind)];
        if *count == 0 {
            return Err(Error::Invariant(format!(
                "release of a {kind} slot on node #{node} that holds none"
            )));
        }
        *count -= 1;
        Ok(())
    }

    pub(crate) fn has_free_at(&self, node: usize, kind: TaskKind) -> bool {
        self.busy[node][slot(kind)] < self.caps.limit(kind)
    }

    pub fn busy(&self, node: &NodeId, kind: TaskKind) -> Result<u32> {
        Ok(self.busy[self.node_index(node)?][slot(kind)])
    }

    pub fn caps(&self) -> &ConcurrencyCaps {
        &self.caps
    }
}

/// Linearizable wrapper around [`SlotLedger`] for the real-time backend.
#[derive(Debug)]
pub struct SharedLedger(Mutex<SlotLedger>);

impl SharedLedger {
    pub fn new(ledger: SlotLedger) -> Self {
        SharedLedger(Mutex::new(ledger))
    }

    pub fn try_acquire(&self, node: &NodeId, kind: TaskKind) -> Result<bool> {
        self.0.lock().expect("ledger lock poisoned").try_acquire(node, kind)
    }

    pub fn release(&self, node: &NodeId, kind: TaskKind) -> Result<()> {
        self.0.lock().expect("ledger lock poisoned").release(node, kind)
    }

    pub fn busy(&self, node: &NodeId, kind: TaskKind) -> Result<u32> {
        self.0.lock().expect("ledger lock poisoned").busy(node, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_node() -> (ClusterSpec, NodeId) {
        let c = ClusterSpec::homogeneous(1, 32, 2, 128.0);
        let id = c.nodes[0].id.clone();
        (c, id)
    }

    #[test]
    fn tiling_cap() {
        let (c, n) = one_node();
        let mut ledger = SlotLedger::new(&c, ConcurrencyCaps::default());
        let grants: Vec<bool> = (0..4)
            .map(|_| ledger.try_acquire(&n, TaskKind::Tiling).unwrap())
            .collect();
        assert_eq!(grants, [true, true, true, false]);
        assert_eq!(ledger.busy(&n, TaskKind::Tiling).unwrap(), 3);
    }

    #[test]
    fn counting_cap() {
        let (c, n) = one_node();
        let mut ledger = SlotLedger::new(&c, ConcurrencyCaps::default());
        let grants: Vec<bool> = (0..3)
            .map(|_| ledger.try_acquire(&n, TaskKind::Counting).unwrap())
            .collect();
        assert_eq!(grants, [true, true, false]);
    }

    #[test]
    fn slot_reuse() {
        let (c, n) = one_node();
        let caps = ConcurrencyCaps {
            max_t1_per_node: 1,
            ..Default::default()
        };
        let mut ledger = SlotLedger::new(&c, caps);
        assert!(ledger.try_acquire(&n, TaskKind::Tiling).unwrap());
        assert!(!ledger.try_acquire(&n, TaskKind::Tiling).unwrap());
        ledger.release(&n, TaskKind::Tiling).unwrap();
        assert!(ledger.try_acquire(&n, TaskKind::Tiling).unwrap());
    }

    #[test]
    fn release_underflow_is_an_invariant_violation() {
        let (c, n) = one_node();
        let mut ledger = SlotLedger::new(&c, ConcurrencyCaps::default());
        assert!(ledger.try_acquire(&n, TaskKind::Counting).unwrap());
        ledger.release(&n, TaskKind::Counting).unwrap();
        assert_eq!(ledger.busy(&n, TaskKind::Counting).unwrap(), 0);
        assert!(matches!(
            ledger.release(&n, TaskKind::Counting),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn unknown_node() {
        let (c, _) = one_node();
        let mut ledger = SlotLedger::new(&c, ConcurrencyCaps::default());
        assert!(matches!(
            ledger.try_acquire(&NodeId::from("nope"), TaskKind::Tiling),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn theoretical_utilization() {
        let c = ClusterSpec::reference();
        let (cpu, gpu) = theoretical_max_utilization(&c, &ConcurrencyCaps::default()).unwrap();
        assert_eq!((cpu, gpu), (0.09375, 1.0));
        let full = ConcurrencyCaps {
            max_t1_per_node: 32,
            max_t2_per_node: 2,
            ..Default::default()
        };
        assert_eq!(theoretical_max_utilization(&c, &full).unwrap(), (1.0, 1.0));
        let half = ConcurrencyCaps {
            max_t2_per_node: 1,
            ..Default::default()
        };
        assert_eq!(theoretical_max_utilization(&c, &half).unwrap().1, 0.5);

        let mut mixed = ClusterSpec::reference();
        mixed.nodes[1].cpu_cores = 16;
        assert!(matches!(
            theoretical_max_utilization(&mixed, &ConcurrencyCaps::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn derived_totals() {
        let c = ClusterSpec::reference();
        assert_eq!((c.total_cpus(), c.total_gpus()), (128, 8));
    }

    #[test]
    fn caps_validation() {
        let node = &ClusterSpec::reference().nodes[0];
        ConcurrencyCaps::default().validate_for(node).unwrap();
        let too_many_gpu = ConcurrencyCaps {
            max_t2_per_node: 3,
            ..Default::default()
        };
        assert!(too_many_gpu.validate_for(node).is_err());
        let too_much_mem = ConcurrencyCaps {
            mem_per_t1_gb: 60.0,
            ..Default::default()
        };
        assert!(too_much_mem.validate_for(node).is_err());
        let gpu_less = ClusterSpec::homogeneous(2, 8, 0, 64.0);
        assert!(ConcurrencyCaps::default()
            .validate_for_cluster(&gpu_less)
            .is_err());
        let bad = NodeSpec {
            id: "x".into(),
            cpu_cores: 1,
            gpus: 2,
            memory_gb: 8.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cluster_config_json() {
        let json = r#"{"nodes":[{"id":"a","cpu_cores":32,"gpus":2,"memory_gb":128}],
                       "caps":{"max_t1_per_node":3,"max_t2_per_node":2,"mem_per_t1_gb":40,"mem_per_t2_gb":4}}"#;
        let cfg: ClusterConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.nodes[0].id, NodeId::from("a"));
        assert_eq!(cfg.caps, ConcurrencyCaps::default());
    }

    #[test]
    fn shared_ledger_never_exceeds_caps() {
        let (c, n) = one_node();
        let ledger = std::sync::Arc::new(SharedLedger::new(SlotLedger::new(
            &c,
            ConcurrencyCaps::default(),
        )));
        let peak = std::sync::Arc::new(std::sync::atomic::AtomicU32::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let ledger = ledger.clone();
                let peak = peak.clone();
                let n = n.clone();
                s.spawn(move || {
                    for _ in 0..500 {
                        if ledger.try_acquire(&n, TaskKind::Tiling).unwrap() {
                            let busy = ledger.busy(&n, TaskKind::Tiling).unwrap();
                            peak.fetch_max(busy, std::sync::atomic::Ordering::SeqCst);
                            ledger.release(&n, TaskKind::Tiling).unwrap();
                        }
                    }
                });
            }
        });
        assert!(peak.load(std::sync::atomic::Ordering::SeqCst) <= 3);
        assert_eq!(ledger.busy(&n, TaskKind::Tiling).unwrap(), 0);
    }

    proptest! {
        // Replays a random acquire/release sequence against a plain counter.
        #[test]
        fn ledger_matches_replay_oracle(ops in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
            let (c, n) = one_node();
            let caps = ConcurrencyCaps::default();
            let mut ledger = SlotLedger::new(&c, caps);
            let mut expected = [0u32; 2];
            for (acquire, gpu) in ops {
                let kind = if gpu { TaskKind::Counting } else { TaskKind::Tiling };
                let k = usize::from(gpu);
                if acquire {
                    let granted = ledger.try_acquire(&n, kind).unwrap();
                    prop_assert_eq!(granted, expected[k] < caps.limit(kind));
                    if granted { expected[k] += 1; }
                } else {
                    let res = ledger.release(&n, kind);
                    prop_assert_eq!(res.is_ok(), expected[k] > 0);
                    if expected[k] > 0 { expected[k] -= 1; }
                }
                prop_assert_eq!(ledger.busy(&n, TaskKind::Tiling).unwrap(), expected[0]);
                prop_assert_eq!(ledger.busy(&n, TaskKind::Counting).unwrap(), expected[1]);
            }
        }
    }
}
