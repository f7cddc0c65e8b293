//! Collective-communication cost model over switch and torus topologies.
//!
//! Each collective is decomposed into phases bound to a link class, so the
//! engine can serialize traffic that shares links.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::{CollectiveKind, CommDim, ParallelConfig, PhaseTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Pods of nodes on a fast switch, joined by a slower second level.
    TwoLevelSwitch,
    /// Every node on one switch at `intra_bw`.
    SingleSwitch,
    /// 3D torus with rings along each dimension.
    Torus3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveAlgo {
    /// One flat ring over the group, limited by its slowest hop.
    LogicalRing,
    /// Intra-pod reduce-scatter, inter-pod ring on the shard, intra-pod all-gather.
    Hierarchical,
}

/// Network description. Bandwidths are bytes/s per node per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_nodes: u64,
    pub pod_size: u64,
    pub topology: Topology,
    pub intra_bw: f64,
    pub inter_bw: f64,
    pub torus_dims: Option<[u64; 3]>,
    /// Per-direction bandwidth of one torus link.
    pub torus_link_bw: f64,
    /// Seconds added per ring step.
    pub link_latency: f64,
    pub collective_algo: CollectiveAlgo,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::config("network.nodes", "must be at least 1"));
        }
        if !(self.link_latency >= 0.0) {
            return Err(Error::config("network.latency_us", "must be non-negative"));
        }
        match self.topology {
            Topology::TwoLevelSwitch | Topology::SingleSwitch => {
                if self.pod_size == 0 || !self.n_nodes.is_multiple_of(self.pod_size) {
                    return Err(Error::config(
                        "network.pod_size",
                        format!("{} nodes are not divisible into pods of {}", self.n_nodes, self.pod_size),
                    ));
                }
                if !(self.intra_bw > 0.0) {
                    return Err(Error::config("network.intra_bw_gbps", "must be positive"));
                }
                if self.topology == Topology::TwoLevelSwitch && !(self.inter_bw > 0.0) {
                    return Err(Error::config("network.inter_bw_gbps", "must be positive"));
                }
            }
            Topology::Torus3d => {
                let dims = self.torus_dims.ok_or_else(|| Error::config("network.torus_dims", "required for a torus"))?;
                if dims.iter().product::<u64>() != self.n_nodes || dims.contains(&0) {
                    return Err(Error::config(
                        "network.torus_dims",
                        format!("{dims:?} does not multiply to {} nodes", self.n_nodes),
                    ));
                }
                if !(self.torus_link_bw > 0.0) {
                    return Err(Error::config("network.torus_link_bw_gbps", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Nodes sharing the first switch level.
    pub fn effective_pod(&self) -> u64 {
        match self.topology {
            Topology::SingleSwitch => self.n_nodes,
            _ => self.pod_size,
        }
    }

    /// Bandwidth of one torus dimension ring: a link in each direction.
    pub fn torus_dim_bw(&self) -> f64 {
        2.0 * self.torus_link_bw
    }
}

/// Resource a collective phase occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    IntraPod,
    InterPod,
    TorusDim(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectivePhase {
    pub link_class: LinkClass,
    pub duration: f64,
}

/// Placement of one communication group on the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommGroup {
    pub kind: CommDim,
    pub size: u64,
    /// Pods touched by one group.
    pub span: u64,
    /// Group members inside each touched pod.
    pub per_pod: u64,
    /// Extent of the group along each torus dimension.
    pub torus_extent: Option<[u64; 3]>,
}

/// Places MP groups on consecutive node IDs and DP groups at stride `mp`.
pub fn place_groups(cfg: ParallelConfig, cluster: &ClusterSpec) -> Result<(CommGroup, CommGroup)> {
    if cfg.nodes() != cluster.n_nodes {
        return Err(Error::config(
            "mp_dp",
            format!("{cfg} needs {} nodes but the cluster has {}", cfg.nodes(), cluster.n_nodes),
        ));
    }
    if let Topology::Torus3d = cluster.topology {
        let dims = cluster.torus_dims.expect("validated torus");
        let mut mp_ext = [1u64; 3];
        let mut rest = cfg.mp;
        for (i, &d) in dims.iter().enumerate() {
            let take = gcd(rest, d);
            mp_ext[i] = take;
            rest /= take;
        }
        if rest != 1 {
            return Err(Error::config("mp_dp", format!("MP degree {} does not tile torus {dims:?}", cfg.mp)));
        }
        let dp_ext = [dims[0] / mp_ext[0], dims[1] / mp_ext[1], dims[2] / mp_ext[2]];
        let group = |kind, size, ext| CommGroup { kind, size, span: 1, per_pod: size, torus_extent: Some(ext) };
        return Ok((group(CommDim::Mp, cfg.mp, mp_ext), group(CommDim::Dp, cfg.dp, dp_ext)));
    }

    let pod = cluster.effective_pod();
    let mp_group = if cfg.mp <= pod {
        CommGroup { kind: CommDim::Mp, size: cfg.mp, span: 1, per_pod: cfg.mp, torus_extent: None }
    } else {
        CommGroup { kind: CommDim::Mp, size: cfg.mp, span: cfg.mp.div_ceil(pod), per_pod: pod, torus_extent: None }
    };
    let per_pod = if cfg.mp >= pod { 1 } else { (pod / cfg.mp).clamp(1, cfg.dp) };
    let dp_group = CommGroup {
        kind: CommDim::Dp,
        size: cfg.dp,
        span: cfg.dp.div_ceil(per_pod),
        per_pod,
        torus_extent: None,
    };
    Ok((mp_group, dp_group))
}

/// The group of every node in the cluster.
pub fn world_group(cluster: &ClusterSpec) -> CommGroup {
    let n = cluster.n_nodes;
    let torus_extent = match cluster.topology {
        Topology::Torus3d => cluster.torus_dims,
        _ => None,
    };
    let pod = cluster.effective_pod().min(n);
    CommGroup { kind: CommDim::World, size: n, span: n.div_ceil(pod), per_pod: pod, torus_extent }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Ring reduce-scatter (or all-gather) of `volume` bytes over `p` nodes.
pub fn ring_reduce_scatter_time(volume: f64, p: u64, bw: f64, latency: f64) -> f64 {
    if p <= 1 {
        return 0.0;
    }
    let steps = (p - 1) as f64;
    steps * (volume / p as f64) / bw + steps * latency
}

pub fn ring_allgather_time(volume: f64, p: u64, bw: f64, latency: f64) -> f64 {
    ring_reduce_scatter_time(volume, p, bw, latency)
}

/// Ring all-reduce: reduce-scatter followed by all-gather.
pub fn ring_allreduce_time(volume: f64, p: u64, bw: f64, latency: f64) -> f64 {
    2.0 * ring_reduce_scatter_time(volume, p, bw, latency)
}

/// Direct all-to-all where every node sends `volume / p` to each peer.
pub fn alltoall_time(volume: f64, p: u64, bw: f64, latency: f64) -> f64 {
    if p <= 1 {
        return 0.0;
    }
    let peers = (p - 1) as f64;
    peers / p as f64 * volume / bw + peers * latency
}

/// Three-phase all-reduce over a group spanning several pods.
pub fn hierarchical_allreduce_time(volume: f64, group: &CommGroup, cluster: &ClusterSpec) -> Vec<CollectivePhase> {
    switch_phases(CollectiveKind::AllReduce, volume, group, cluster, CollectiveAlgo::Hierarchical)
}

fn phase(link_class: LinkClass, duration: f64) -> Option<CollectivePhase> {
    (duration > 0.0).then_some(CollectivePhase { link_class, duration })
}

fn switch_phases(
    kind: CollectiveKind,
    volume: f64,
    group: &CommGroup,
    cluster: &ClusterSpec,
    algo: CollectiveAlgo,
) -> Vec<CollectivePhase> {
    let lat = cluster.link_latency;
    let p = group.size;
    let (q, span) = (group.per_pod, group.span);
    let intra = cluster.intra_bw;
    let inter = if cluster.topology == Topology::SingleSwitch { intra } else { cluster.inter_bw };
    let rs = ring_reduce_scatter_time;

    if p <= 1 {
        return Vec::new();
    }
    if span <= 1 {
        let t = match kind {
            CollectiveKind::AllReduce => ring_allreduce_time(volume, p, intra, lat),
            CollectiveKind::AllToAll => alltoall_time(volume, p, intra, lat),
            _ => rs(volume, p, intra, lat),
        };
        return phase(LinkClass::IntraPod, t).into_iter().collect();
    }

    if kind == CollectiveKind::AllToAll {
        // Peers inside the pod go over the pod switch, the rest leave it.
        let pf = p as f64;
        let local = (q - 1) as f64;
        let remote = (p - q) as f64;
        return [
            phase(LinkClass::IntraPod, local / pf * volume / intra + local * lat),
            phase(LinkClass::InterPod, remote / pf * volume / inter + remote * lat),
        ]
        .into_iter()
        .flatten()
        .collect();
    }

    if algo == CollectiveAlgo::LogicalRing {
        // One ring; every step waits on its slowest hop.
        let bw = inter.min(intra);
        let t = match kind {
            CollectiveKind::AllReduce => ring_allreduce_time(volume, p, bw, lat),
            _ => rs(volume, p, bw, lat),
        };
        return phase(LinkClass::InterPod, t).into_iter().collect();
    }

    let shard = volume / q as f64;
    let local = rs(volume, q, intra, lat);
    let out = match kind {
        CollectiveKind::AllReduce => vec![
            phase(LinkClass::IntraPod, local),
            phase(LinkClass::InterPod, ring_allreduce_time(shard, span, inter, lat)),
            phase(LinkClass::IntraPod, local),
        ],
        CollectiveKind::ReduceScatter => {
            vec![phase(LinkClass::IntraPod, local), phase(LinkClass::InterPod, rs(shard, span, inter, lat))]
        }
        _ => vec![phase(LinkClass::InterPod, rs(shard, span, inter, lat)), phase(LinkClass::IntraPod, local)],
    };
    out.into_iter().flatten().collect()
}

/// Dimension-ordered collective on a torus: reduce-scatter along each
/// dimension in turn on a shrinking volume, then all-gather in reverse.
fn torus_phases(kind: CollectiveKind, volume: f64, extent: [u64; 3], cluster: &ClusterSpec) -> Vec<CollectivePhase> {
    let bw = cluster.torus_dim_bw();
    let lat = cluster.link_latency;
    let dims: Vec<(u8, u64)> = (0u8..3).zip(extent).filter(|&(_, n)| n > 1).collect();

    if kind == CollectiveKind::AllToAll {
        return dims
            .iter()
            .filter_map(|&(i, n)| phase(LinkClass::TorusDim(i), alltoall_time(volume, n, bw, lat)))
            .collect();
    }

    let mut scatter = Vec::new();
    let mut v = volume;
    for &(i, n) in &dims {
        scatter.push((i, ring_reduce_scatter_time(v, n, bw, lat)));
        v /= n as f64;
    }
    let gather: Vec<_> = scatter.iter().rev().copied().collect();
    let steps = match kind {
        CollectiveKind::AllReduce => [scatter, gather].concat(),
        CollectiveKind::ReduceScatter => scatter,
        _ => gather,
    };
    steps.into_iter().filter_map(|(i, t)| phase(LinkClass::TorusDim(i), t)).collect()
}

/// Phases of `kind` moving `volume` bytes per node over `group`.
pub fn group_collective(
    kind: CollectiveKind,
    volume: f64,
    group: &CommGroup,
    cluster: &ClusterSpec,
) -> Vec<CollectivePhase> {
    if kind == CollectiveKind::None || volume <= 0.0 || group.size <= 1 {
        return Vec::new();
    }
    match group.torus_extent {
        Some(ext) => torus_phases(kind, volume, ext, cluster),
        None => switch_phases(kind, volume, group, cluster, cluster.collective_algo),
    }
}

/// Phases of the collective attached to `task`, placed for `cfg`.
pub fn collective_time(task: &PhaseTask, cfg: ParallelConfig, cluster: &ClusterSpec) -> Result<Vec<CollectivePhase>> {
    if task.collective == CollectiveKind::None {
        return Ok(Vec::new());
    }
    let (mp, dp) = place_groups(cfg, cluster)?;
    let group = match task.comm_dim {
        CommDim::Mp => mp,
        CommDim::Dp => dp,
        CommDim::World => world_group(cluster),
    };
    Ok(group_collective(task.collective, task.comm_volume as f64, &group, cluster))
}
