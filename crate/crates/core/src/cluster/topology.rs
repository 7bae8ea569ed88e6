use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Shard within each node, replicate each shard across nodes.
    HybridSharded,
    /// Every accelerator is a full replica and all of them gather from each other.
    DdpAllGather,
}

/// Accelerator owning one optimizer state: a `(node, shard)` pair in hybrid
/// mode, a `(node, accelerator)` pair in DDP mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rank {
    pub node: usize,
    pub accel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTopology {
    pub nodes: usize,
    pub accels_per_node: usize,
    #[serde(default = "default_mode")]
    pub mode: ClusterMode,
}

fn default_mode() -> ClusterMode {
    ClusterMode::HybridSharded
}

impl ClusterTopology {
    pub fn new(nodes: usize, accels_per_node: usize, mode: ClusterMode) -> Result<Self> {
        let t = Self {
            nodes,
            accels_per_node,
            mode,
        };
        let v = t.violations();
        if v.is_empty() {
            Ok(t)
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn hybrid(nodes: usize, accels_per_node: usize) -> Result<Self> {
        Self::new(nodes, accels_per_node, ClusterMode::HybridSharded)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.nodes == 0 {
            v.push("topology.nodes must be >= 1".into());
        }
        if self.accels_per_node == 0 {
            v.push("topology.accels_per_node must be >= 1".into());
        }
        v
    }

    pub fn accelerators(&self) -> usize {
        self.nodes * self.accels_per_node
    }

    /// Number of parameter shards, i.e. the sharding-group size.
    pub fn shard_count(&self) -> usize {
        match self.mode {
            ClusterMode::HybridSharded => self.accels_per_node,
            ClusterMode::DdpAllGather => 1,
        }
    }

    /// Holders of a full parameter copy: nodes in hybrid mode, accelerators in DDP mode.
    pub fn replica_count(&self) -> usize {
        match self.mode {
            ClusterMode::HybridSharded => self.nodes,
            ClusterMode::DdpAllGather => self.accelerators(),
        }
    }

    pub fn replica_node(&self, replica: usize) -> usize {
        match self.mode {
            ClusterMode::HybridSharded => replica,
            ClusterMode::DdpAllGather => replica / self.accels_per_node,
        }
    }

    /// Sharding group of node `node`: its accelerators in rank order.
    pub fn sharding_group(&self, node: usize) -> Vec<Rank> {
        (0..self.accels_per_node)
            .map(|accel| Rank { node, accel })
            .collect()
    }

    /// Replication groups, one per shard; members are `(replica, shard)` pairs
    /// in rank order.
    pub fn replication_groups(&self) -> Vec<Vec<(usize, usize)>> {
        (0..self.shard_count())
            .map(|shard| (0..self.replica_count()).map(|r| (r, shard)).collect())
            .collect()
    }

    pub fn replication_group_size(&self) -> usize {
        self.replica_count()
    }
}

/// Link bandwidths in bits per second and simulated compute time per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub intra_node_bandwidth: f64,
    pub inter_node_bandwidth: f64,
    pub compute_time_per_step: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            intra_node_bandwidth: 100e9,
            inter_node_bandwidth: 1e9,
            compute_time_per_step: 0.1,
        }
    }
}

impl LinkModel {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.intra_node_bandwidth > 0.0 && self.intra_node_bandwidth.is_finite()) {
            v.push(format!(
                "link.intra_node_bandwidth must be > 0, got {}",
                self.intra_node_bandwidth
            ));
        }
        if !(self.inter_node_bandwidth > 0.0 && self.inter_node_bandwidth.is_finite()) {
            v.push(format!(
                "link.inter_node_bandwidth must be > 0, got {}",
                self.inter_node_bandwidth
            ));
        }
        if !(self.compute_time_per_step > 0.0 && self.compute_time_per_step.is_finite()) {
            v.push(format!(
                "link.compute_time_per_step must be > 0, got {}",
                self.compute_time_per_step
            ));
        }
        v
    }

    /// Serialized phases, no overlap: compute, then intra-node, then inter-node traffic.
    pub fn step_time(&self, intra_bytes: u64, inter_bytes: u64) -> f64 {
        self.compute_time_per_step
            + intra_bytes as f64 * 8.0 / self.intra_node_bandwidth
            + inter_bytes as f64 * 8.0 / self.inter_node_bandwidth
    }
}

pub fn step_time(intra_bytes: u64, inter_bytes: u64, link: &LinkModel) -> f64 {
    link.step_time(intra_bytes, inter_bytes)
}
