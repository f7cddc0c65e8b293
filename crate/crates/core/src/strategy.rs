//! Parallelization strategies: (MP, DP) enumeration, per-node sharding,
//! ZeRO memory footprints and per-phase workload traces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfmodel::{gemm_memory_traffic, NodeSpec};
use crate::workload::{
    layer_flops, ActivationSync, Axis, LayerDescriptor, LayerGraph, LayerKind, ModelKind, Phase, RowScope, Weights,
};

/// A hybrid model/data-parallel strategy with `mp × dp` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub mp: u64,
    pub dp: u64,
}

impl ParallelConfig {
    pub fn new(mp: u64, dp: u64) -> Result<Self> {
        for (field, v) in [("mp", mp), ("dp", dp)] {
            if !v.is_power_of_two() {
                return Err(Error::config(field, format!("{v} is not a power of two")));
            }
        }
        Ok(ParallelConfig { mp, dp })
    }

    pub fn nodes(&self) -> u64 {
        self.mp * self.dp
    }
}

impl fmt::Display for ParallelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MP{}_DP{}", self.mp, self.dp)
    }
}

/// Accepts `MP8_DP128` or `8x128`.
impl FromStr for ParallelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("mp_dp", format!("cannot parse `{s}`; expected `MP8_DP128` or `8x128`"));
        let t = s.trim();
        let (mp, dp) = if let Some((a, b)) = t.split_once('x') {
            (a, b)
        } else {
            let upper = t.to_ascii_uppercase();
            let rest = upper.strip_prefix("MP").ok_or_else(bad)?;
            let (a, b) = rest.split_once("_DP").ok_or_else(bad)?;
            return ParallelConfig::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        };
        ParallelConfig::new(mp.trim().parse().map_err(|_| bad())?, dp.trim().parse().map_err(|_| bad())?)
    }
}

/// All power-of-two (MP, DP) splits of `n_nodes`, from MP = N down to MP = 1.
pub fn enumerate_strategies(n_nodes: u64) -> Result<Vec<ParallelConfig>> {
    if !n_nodes.is_power_of_two() {
        return Err(Error::config("nodes", format!("{n_nodes} is not a power of two")));
    }
    let mut out = Vec::new();
    let mut mp = n_nodes;
    loop {
        out.push(ParallelConfig { mp, dp: n_nodes / mp });
        if mp == 1 {
            break;
        }
        mp /= 2;
    }
    Ok(out)
}

/// ZeRO-DP partitioning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum ZeroStage {
    Baseline,
    OptimizerStates,
    #[default]
    Gradients,
    Parameters,
}

impl ZeroStage {
    pub const ALL: [ZeroStage; 4] =
        [ZeroStage::Baseline, ZeroStage::OptimizerStates, ZeroStage::Gradients, ZeroStage::Parameters];

    pub fn from_index(stage: u8) -> Result<Self> {
        Self::ALL
            .get(stage as usize)
            .copied()
            .ok_or_else(|| Error::config("zero", format!("stage {stage} is not in 0..=3")))
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

impl Serialize for ZeroStage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index())
    }
}

impl<'de> Deserialize<'de> for ZeroStage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        ZeroStage::from_index(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    None,
    AllReduce,
    AllToAll,
    ReduceScatter,
    AllGather,
}

impl CollectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CollectiveKind::None => "none",
            CollectiveKind::AllReduce => "all_reduce",
            CollectiveKind::AllToAll => "all_to_all",
            CollectiveKind::ReduceScatter => "reduce_scatter",
            CollectiveKind::AllGather => "all_gather",
        }
    }
}

/// Group a collective runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommDim {
    Mp,
    Dp,
    /// Every node of the cluster (DLRM embedding exchange).
    World,
}

impl CommDim {
    pub fn as_str(self) -> &'static str {
        match self {
            CommDim::Mp => "mp",
            CommDim::Dp => "dp",
            CommDim::World => "world",
        }
    }
}

/// Work of one layer in one training phase on one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTask {
    pub flops: u128,
    pub mem_traffic: u128,
    pub collective: CollectiveKind,
    pub comm_volume: u64,
    pub comm_dim: CommDim,
    pub blocking: bool,
}

impl PhaseTask {
    fn compute(flops: u128, mem_traffic: u128, comm_dim: CommDim) -> Self {
        PhaseTask {
            flops,
            mem_traffic,
            collective: CollectiveKind::None,
            comm_volume: 0,
            comm_dim,
            blocking: comm_dim != CommDim::Dp,
        }
    }

    fn with_collective(mut self, kind: CollectiveKind, volume: u64) -> Self {
        if volume > 0 {
            self.collective = kind;
            self.comm_volume = volume;
        }
        self
    }

    pub fn has_comm(&self) -> bool {
        self.collective != CollectiveKind::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTasks {
    pub name: String,
    pub fp: PhaseTask,
    pub ig: PhaseTask,
    pub wg: PhaseTask,
}

impl LayerTasks {
    pub fn phase(&self, phase: Phase) -> &PhaseTask {
        match phase {
            Phase::Fp => &self.fp,
            Phase::Ig => &self.ig,
            Phase::Wg => &self.wg,
        }
    }
}

/// Per-node memory footprint in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Footprint {
    pub parameters: u64,
    pub gradients: u64,
    pub optimizer_states: u64,
    /// Activation working memory (one checkpoint segment, fp16).
    pub activations: u64,
}

impl Footprint {
    pub fn model_states(&self) -> u64 {
        self.parameters + self.gradients + self.optimizer_states
    }

    pub fn total(&self) -> u64 {
        self.model_states() + self.activations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub config: ParallelConfig,
    pub zero: ZeroStage,
    pub layers: Vec<LayerTasks>,
    /// Optimizer step after the backward pass (element-wise, no communication).
    pub optimizer_step: PhaseTask,
    pub footprint: Footprint,
}

impl WorkloadTrace {
    pub fn per_node_footprint(&self) -> u64 {
        self.footprint.total()
    }
}

/// Bytes of mixed-precision Adam state per parameter: fp32 master copy,
/// momentum and variance.
pub const OPTIMIZER_BYTES_PER_PARAM: u64 = 12;

fn resize(dim: u64, axis: Axis, mp: u64, rows: u64) -> Result<u64> {
    match axis {
        Axis::Fixed => Ok(dim),
        Axis::Rows => Ok(rows),
        Axis::Model { field, units } => {
            if !units.is_multiple_of(mp) || !dim.is_multiple_of(mp) {
                return Err(Error::config(field, format!("{units} is not divisible by MP degree {mp}")));
            }
            Ok(dim / mp)
        }
    }
}

fn shard_with_samples(layer: &LayerDescriptor, cfg: ParallelConfig, replica_samples: u64) -> Result<LayerDescriptor> {
    let sh = layer.sharding;
    let samples = match sh.rows {
        RowScope::Replica => replica_samples,
        RowScope::Global => replica_samples * cfg.dp,
    };
    let rows = samples * sh.rows_per_sample;
    let mut out = layer.clone();
    out.m = rows;
    out.k = resize(layer.k, sh.k, cfg.mp, rows)?;
    out.n = resize(layer.n, sh.n, cfg.mp, rows)?;
    if sh.split_stacks {
        let nodes = cfg.nodes();
        if !layer.stacks.is_multiple_of(nodes) {
            return Err(Error::config(
                format!("{}.stacks", layer.name),
                format!("{} tables cannot be spread evenly over {nodes} nodes", layer.stacks),
            ));
        }
        out.stacks = layer.stacks / nodes;
    }
    Ok(out)
}

/// Shards one layer for `cfg`, with M set to the per-replica batch
/// `global_batch / dp` times the layer's rows per sample.
pub fn shard_layer(layer: &LayerDescriptor, cfg: ParallelConfig, global_batch: u64) -> Result<LayerDescriptor> {
    if !global_batch.is_multiple_of(cfg.dp) {
        return Err(Error::config(
            "global_batch",
            format!("{global_batch} is not divisible by DP degree {}", cfg.dp),
        ));
    }
    shard_with_samples(layer, cfg, global_batch / cfg.dp)
}

/// Shards the whole graph for `cfg`.
pub fn shard_graph(graph: &LayerGraph, cfg: ParallelConfig) -> Result<Vec<LayerDescriptor>> {
    check_strategy(graph, cfg)?;
    graph.layers.iter().map(|l| shard_layer(l, cfg, graph.global_batch)).collect()
}

fn check_strategy(graph: &LayerGraph, cfg: ParallelConfig) -> Result<()> {
    if graph.kind == ModelKind::Dlrm && cfg.mp != 1 {
        return Err(Error::config("mp", "DLRM uses a fixed hybrid strategy; MP must be 1"));
    }
    Ok(())
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Per-node memory footprint of `graph` under `cfg` and ZeRO stage `z`.
///
/// Model states use 2 bytes of fp16 parameters, 2 of fp16 gradients and 12
/// of optimizer state per parameter; ZeRO partitions them across DP for the
/// parameters that are DP-replicated. Activations count one checkpoint
/// segment of micro-batch activations in fp16.
pub fn footprint_per_node(graph: &LayerGraph, cfg: ParallelConfig, z: ZeroStage) -> Result<Footprint> {
    check_strategy(graph, cfg)?;
    let dp = cfg.dp;
    let mut replicated = 0u64;
    let mut distributed = 0u64;
    let micro = graph.mini_batch.min((graph.global_batch / dp).max(1));
    let mut block_act = 0u64;
    let mut segment_act = 0u64;
    let mut element_bytes = 2u64;

    for layer in &graph.layers {
        let sharded = shard_with_samples(layer, cfg, graph.global_batch / dp)?;
        match layer.weights {
            Weights::Replicated => replicated += sharded.weight_params(),
            Weights::Distributed => distributed += sharded.weight_params(),
            Weights::None => {}
        }
        let act = shard_with_samples(layer, cfg, micro)?;
        element_bytes = layer.bytes_per_element;
        if layer.block {
            block_act += act.output_elements();
        } else {
            segment_act = segment_act.max(act.output_elements() * act.stacks);
        }
    }

    let split = |bytes_per_param: u64, partitioned: bool| {
        if partitioned {
            bytes_per_param * distributed + div_ceil(bytes_per_param * replicated, dp)
        } else {
            bytes_per_param * (distributed + replicated)
        }
    };
    Ok(Footprint {
        parameters: split(2, z >= ZeroStage::Parameters),
        gradients: split(2, z >= ZeroStage::Gradients),
        optimizer_states: split(OPTIMIZER_BYTES_PER_PARAM, z >= ZeroStage::OptimizerStates),
        activations: block_act.max(segment_act) * element_bytes,
    })
}

fn phase_traffic(layer: &LayerDescriptor, phase: Phase, buffer: u64) -> Result<u128> {
    let e = layer.bytes_per_element as u128;
    let (m, k, n, s) = (layer.m as u128, layer.k as u128, layer.n as u128, layer.stacks as u128);
    let traffic = match layer.kind {
        LayerKind::Gemm | LayerKind::TableUpdate => {
            let (x, w, y) = (m * k * e, k * n * e, m * n * e);
            let one = match phase {
                Phase::Fp => gemm_memory_traffic(x, w, y, buffer as u128)?,
                Phase::Ig => gemm_memory_traffic(y, w, x, buffer as u128)?,
                Phase::Wg => gemm_memory_traffic(x, y, w, buffer as u128)?,
            };
            one * s
        }
        // Streaming: read input, write output.
        LayerKind::Elementwise => 2 * m * n * e * s,
        // Gathered rows are read once and written out; updates read the
        // gradient and read-modify-write the touched rows.
        LayerKind::TableLookup => match phase {
            Phase::Fp => 2 * m * n * e * s,
            Phase::Ig => 0,
            Phase::Wg => 3 * m * n * e * s,
        },
    };
    Ok(traffic)
}

fn layer_tasks(
    name: String,
    layer: &LayerDescriptor,
    cfg: ParallelConfig,
    z: ZeroStage,
    buffer: u64,
) -> Result<LayerTasks> {
    let e = layer.bytes_per_element;
    let (blocking_dim, _) = match layer.sync {
        ActivationSync::AllToAll => (CommDim::World, ()),
        _ => (CommDim::Mp, ()),
    };
    let task = |phase| -> Result<PhaseTask> {
        let dim = if phase == Phase::Wg { CommDim::Dp } else { blocking_dim };
        Ok(PhaseTask::compute(layer_flops(layer, phase), phase_traffic(layer, phase, buffer)?, dim))
    };
    let mut fp = task(Phase::Fp)?;
    let mut ig = task(Phase::Ig)?;
    let mut wg = task(Phase::Wg)?;

    let output = layer.m * layer.n * e * layer.stacks;
    let input_grad = layer.m * layer.k * e * layer.stacks;
    match layer.sync {
        ActivationSync::ModelAllReduce { fp: on_fp, ig: on_ig } if cfg.mp > 1 => {
            if on_fp {
                fp = fp.with_collective(CollectiveKind::AllReduce, output);
            }
            if on_ig {
                ig = ig.with_collective(CollectiveKind::AllReduce, input_grad);
            }
        }
        ActivationSync::AllToAll if cfg.nodes() > 1 => {
            fp = fp.with_collective(CollectiveKind::AllToAll, output);
            ig = ig.with_collective(CollectiveKind::AllToAll, output);
        }
        _ => {}
    }

    if layer.weights == Weights::Replicated && cfg.dp > 1 {
        let grads = layer.weight_params() * e;
        wg = match z {
            ZeroStage::Baseline | ZeroStage::OptimizerStates => wg.with_collective(CollectiveKind::AllReduce, grads),
            // Gradient reduce-scatter followed by the parameter all-gather:
            // same bytes on the wire as an all-reduce.
            ZeroStage::Gradients => wg.with_collective(CollectiveKind::ReduceScatter, 2 * grads),
            // Extra parameter all-gather: 1.5× the baseline volume.
            ZeroStage::Parameters => wg.with_collective(CollectiveKind::ReduceScatter, 3 * grads),
        };
    }
    Ok(LayerTasks { name, fp, ig, wg })
}

/// Builds the per-node workload trace of one training iteration.
///
/// Repeated-block layers are unrolled, one entry per stack, so each block
/// carries its own synchronization points.
pub fn build_trace(graph: &LayerGraph, cfg: ParallelConfig, z: ZeroStage, node: &NodeSpec) -> Result<WorkloadTrace> {
    let sharded = shard_graph(graph, cfg)?;
    let footprint = footprint_per_node(graph, cfg, z)?;
    let buffer = node.on_chip_bytes;

    let mut layers = Vec::new();
    let mut i = 0;
    while i < sharded.len() {
        if !sharded[i].block {
            let l = &sharded[i];
            layers.push(layer_tasks(l.name.clone(), l, cfg, z, buffer)?);
            i += 1;
            continue;
        }
        let end = sharded[i..].iter().position(|l| !l.block).map_or(sharded.len(), |p| i + p);
        let block = &sharded[i..end];
        let stacks = block[0].stacks;
        let mut per_stack = Vec::with_capacity(block.len());
        for l in block {
            let one = LayerDescriptor { stacks: 1, ..l.clone() };
            per_stack.push(layer_tasks(String::new(), &one, cfg, z, buffer)?);
        }
        for s in 0..stacks {
            for (l, t) in block.iter().zip(&per_stack) {
                layers.push(LayerTasks { name: format!("block{s}.{}", l.name), ..t.clone() });
            }
        }
        i = end;
    }

    let updated: u64 = sharded
        .iter()
        .map(|l| match l.weights {
            Weights::Replicated if z >= ZeroStage::OptimizerStates => div_ceil(l.weight_params(), cfg.dp),
            Weights::None => 0,
            _ => l.weight_params(),
        })
        .sum();
    let optimizer_step = PhaseTask::compute(updated as u128, footprint.model_states() as u128, CommDim::Dp);

    Ok(WorkloadTrace { config: cfg, zero: z, layers, optimizer_step, footprint })
}

/// Writes one CSV row per layer and phase, plus the optimizer step.
pub fn write_trace_csv<W: std::io::Write>(trace: &WorkloadTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "phase", "flops", "mem_traffic", "collective", "comm_volume", "comm_dim", "blocking"])?;
    let rows = trace
        .layers
        .iter()
        .flat_map(|l| Phase::ALL.map(|p| (l.name.as_str(), p.as_str(), l.phase(p))))
        .chain([("optimizer_step", "update", &trace.optimizer_step)]);
    for (name, phase, t) in rows {
        w.write_record([
            name.to_string(),
            phase.to_string(),
            t.flops.to_string(),
            t.mem_traffic.to_string(),
            t.collective.as_str().to_string(),
            t.comm_volume.to_string(),
            t.comm_dim.as_str().to_string(),
            t.blocking.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
