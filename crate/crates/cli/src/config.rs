//! JSON config file for `run` and `compare`. Every field is optional;
//! command-line flags override what is set here.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hetflow::cluster::{ClusterConfig, NodeId};
use hetflow::designs::{Backend, DesignId, NodeSpeed, Overheads, PartitionStrategy, RunConfig, TaskKind};
use hetflow::perfmodel::ModelRegistry;
use hetflow::workload::WorkloadSpec;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub workload: Option<WorkloadSpec>,
    /// Workload manifest path; takes precedence over `workload`.
    pub manifest: Option<PathBuf>,
    pub cluster: Option<ClusterConfig>,
    pub models: Option<ModelRegistry>,
    pub designs: Option<Vec<DesignId>>,
    pub seeds: Option<Vec<u64>>,
    pub backend: Option<Backend>,
    pub poll_interval_s: Option<f64>,
    pub time_scale: Option<f64>,
    pub overheads: Option<Overheads>,
    pub speed_multipliers: Option<BTreeMap<NodeId, NodeSpeed>>,
    pub partition: Option<PartitionStrategy>,
    pub partition_by: Option<TaskKind>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    /// Copies the run settings present in the file onto `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(p) = self.poll_interval_s {
            cfg.poll_interval_s = p;
        }
        if let Some(t) = self.time_scale {
            cfg.time_scale = t;
        }
        if let Some(o) = &self.overheads {
            cfg.overheads = o.clone();
        }
        if let Some(s) = &self.speed_multipliers {
            cfg.speed_multipliers = s.clone();
        }
        if let Some(p) = self.partition {
            cfg.partition = p;
        }
        if let Some(k) = self.partition_by {
            cfg.partition_by = k;
        }
    }
}

/// Seed list given as one command-line value.
#[derive(Debug, Clone)]
pub struct SeedList(pub Vec<u64>);

impl std::str::FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_seeds(s).map(SeedList)
    }
}

/// `3`, `0..10` and `1,4,7..9` style seed lists.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.parse().map_err(|_| format!("bad seed range `{part}`"))?;
                let b: u64 = b.parse().map_err(|_| format!("bad seed range `{part}`"))?;
                if a >= b {
                    return Err(format!("empty seed range `{part}`"));
                }
                seeds.extend(a..b);
            }
            None => seeds.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?),
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

pub fn parse_bin_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected first:last, got `{s}`"))?;
    let first = a.parse().map_err(|_| format!("bad bin `{a}`"))?;
    let last = b.parse().map_err(|_| format!("bad bin `{b}`"))?;
    Ok((first, last))
}
