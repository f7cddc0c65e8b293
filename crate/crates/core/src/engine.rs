//! One-iteration scheduler over a compute clock and per-link-class network
//! timelines.
//!
//! Blocking collectives stall the compute clock; non-blocking weight-gradient
//! collectives queue FIFO on their links and only show up as exposed time if
//! they outlast the compute.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{collective_time, ClusterSpec, LinkClass};
use crate::perfmodel::{attainable_perf, compute_delay, hybrid_bandwidth, operational_intensity, NodeSpec};
use crate::strategy::{ParallelConfig, PhaseTask, WorkloadTrace, ZeroStage};
use crate::workload::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub compute_s: f64,
    pub exposed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub name: String,
    pub fp: PhaseTiming,
    pub ig: PhaseTiming,
    pub wg: PhaseTiming,
}

impl LayerTiming {
    pub fn phase(&self, phase: Phase) -> &PhaseTiming {
        match phase {
            Phase::Fp => &self.fp,
            Phase::Ig => &self.ig,
            Phase::Wg => &self.wg,
        }
    }

    fn phase_mut(&mut self, phase: Phase) -> &mut PhaseTiming {
        match phase {
            Phase::Fp => &mut self.fp,
            Phase::Ig => &mut self.ig,
            Phase::Wg => &mut self.wg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub compute_s: f64,
    pub exposed_comm_s: f64,
    pub iteration_s: f64,
    /// Sum of all collective phase durations, overlapped or not.
    pub raw_comm_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub layers: Vec<LayerTiming>,
    pub optimizer_s: f64,
    /// Effective memory bandwidth used for the roofline.
    pub memory_bw: f64,
    pub totals: Totals,
    /// Busy time of each link class.
    pub link_busy_s: BTreeMap<LinkClass, f64>,
}

impl Breakdown {
    /// Per-phase sums over all layers: (compute, exposed).
    pub fn phase_totals(&self, phase: Phase) -> PhaseTiming {
        let mut acc = PhaseTiming::default();
        for l in &self.layers {
            let t = l.phase(phase);
            acc.compute_s += t.compute_s;
            acc.exposed_s += t.exposed_s;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub config: ParallelConfig,
    pub zero: ZeroStage,
    pub footprint_bytes: u64,
    pub feasible: bool,
    /// Timings; absent when the footprint does not fit.
    pub breakdown: Option<Breakdown>,
}

impl IterationResult {
    pub fn iteration_s(&self) -> Option<f64> {
        self.breakdown.as_ref().map(|b| b.totals.iteration_s)
    }
}

/// Roofline delay of one phase task at memory bandwidth `bw`.
pub fn task_compute_delay(task: &PhaseTask, bw: f64, node: &NodeSpec) -> Result<f64> {
    if task.flops == 0 {
        return Ok(0.0);
    }
    let flops = task.flops as f64;
    let perf = if task.mem_traffic == 0 {
        node.perf_peak
    } else {
        attainable_perf(operational_intensity(flops, task.mem_traffic as f64)?, bw, node)
    };
    compute_delay(flops, perf)
}

/// Simulates one training iteration of `trace` on a representative node.
pub fn simulate_iteration(
    trace: &WorkloadTrace,
    cfg: ParallelConfig,
    cluster: &ClusterSpec,
    node: &NodeSpec,
) -> Result<IterationResult> {
    if trace.config != cfg {
        return Err(Error::config("mp_dp", format!("trace was built for {} but {cfg} was requested", trace.config)));
    }
    node.validate()?;
    cluster.validate()?;
    let footprint = trace.footprint.total();
    let mut result =
        IterationResult { config: cfg, zero: trace.zero, footprint_bytes: footprint, feasible: false, breakdown: None };
    if footprint > node.capacity() {
        return Ok(result);
    }
    let bw = if node.unconstrained || footprint <= node.lm_capacity {
        node.lm_bw
    } else {
        hybrid_bandwidth(footprint as f64, node)?
    };

    let mut layers: Vec<LayerTiming> = trace
        .layers
        .iter()
        .map(|l| LayerTiming {
            name: l.name.clone(),
            fp: PhaseTiming::default(),
            ig: PhaseTiming::default(),
            wg: PhaseTiming::default(),
        })
        .collect();
    let mut clock = 0.0f64;
    let mut compute_total = 0.0f64;
    let mut raw_comm = 0.0f64;
    let mut links: BTreeMap<LinkClass, f64> = BTreeMap::new();
    let mut busy: BTreeMap<LinkClass, f64> = BTreeMap::new();
    // (finish time, layer index) of the latest non-blocking collective.
    let mut last_async: Option<(f64, usize)> = None;

    let order = (0..trace.layers.len())
        .map(|i| (i, Phase::Fp))
        .chain((0..trace.layers.len()).rev().flat_map(|i| [(i, Phase::Ig), (i, Phase::Wg)]));

    for (i, phase) in order {
        let task = trace.layers[i].phase(phase);
        let delay = task_compute_delay(task, bw, node)?;
        clock += delay;
        compute_total += delay;
        layers[i].phase_mut(phase).compute_s = delay;

        let phases = collective_time(task, cfg, cluster)?;
        let mut t = clock;
        for p in &phases {
            let free = links.entry(p.link_class).or_insert(0.0);
            let start = t.max(*free);
            t = start + p.duration;
            *free = t;
            *busy.entry(p.link_class).or_insert(0.0) += p.duration;
            raw_comm += p.duration;
        }
        if phases.is_empty() {
            continue;
        }
        if task.blocking {
            layers[i].phase_mut(phase).exposed_s = t - clock;
            clock = t;
        } else if last_async.is_none_or(|(end, _)| t >= end) {
            last_async = Some((t, i));
        }
    }

    let optimizer_s = task_compute_delay(&trace.optimizer_step, bw, node)?;
    clock += optimizer_s;
    compute_total += optimizer_s;

    let end = links.values().fold(clock, |a, &b| a.max(b));
    if end > clock {
        if let Some((_, i)) = last_async {
            layers[i].wg.exposed_s += end - clock;
        }
    }
    let exposed: f64 = layers.iter().map(|l| l.fp.exposed_s + l.ig.exposed_s + l.wg.exposed_s).sum();
    result.feasible = true;
    result.breakdown = Some(Breakdown {
        layers,
        optimizer_s,
        memory_bw: bw,
        totals: Totals {
            compute_s: compute_total,
            exposed_comm_s: exposed,
            iteration_s: compute_total + exposed,
            raw_comm_s: raw_comm,
        },
        link_busy_s: busy,
    });
    Ok(result)
}

/// Exposed communication divided by compute time.
pub fn exposed_comm_ratio(result: &IterationResult) -> Result<f64> {
    let b = result.breakdown.as_ref().ok_or(Error::ZeroCompute)?;
    if b.totals.compute_s <= 0.0 {
        return Err(Error::ZeroCompute);
    }
    Ok(b.totals.exposed_comm_s / b.totals.compute_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{CollectiveAlgo, Topology};
    use crate::strategy::{CollectiveKind, CommDim, Footprint, LayerTasks};

    fn node() -> NodeSpec {
        NodeSpec {
            perf_peak: 100.0,
            on_chip_bytes: 1,
            lm_capacity: 1000,
            lm_bw: 10.0,
            em_capacity: 0,
            em_bw: 0.0,
            unconstrained: false,
        }
    }

    fn cluster() -> ClusterSpec {
        ClusterSpec {
            n_nodes: 4,
            pod_size: 4,
            topology: Topology::TwoLevelSwitch,
            intra_bw: 1.0,
            inter_bw: 1.0,
            torus_dims: None,
            torus_link_bw: 0.0,
            link_latency: 0.0,
            collective_algo: CollectiveAlgo::Hierarchical,
        }
    }

    fn task(flops: u128, comm: u64, dim: CommDim) -> PhaseTask {
        PhaseTask {
            flops,
            mem_traffic: flops,
            collective: if comm > 0 { CollectiveKind::AllReduce } else { CollectiveKind::None },
            comm_volume: comm,
            comm_dim: dim,
            blocking: dim != CommDim::Dp,
        }
    }

    fn trace(cfg: ParallelConfig, layers: Vec<LayerTasks>) -> WorkloadTrace {
        WorkloadTrace {
            config: cfg,
            zero: ZeroStage::Baseline,
            layers,
            optimizer_step: task(0, 0, CommDim::Dp),
            footprint: Footprint { parameters: 10, ..Default::default() },
        }
    }

    fn layer(fp: PhaseTask, ig: PhaseTask, wg: PhaseTask) -> LayerTasks {
        LayerTasks { name: "l".into(), fp, ig, wg }
    }

    #[test]
    fn no_comm_is_sum_of_compute() {
        let cfg = ParallelConfig::new(1, 4).unwrap();
        // OI = 1 → 10 FLOP/s.
        let t = trace(cfg, vec![layer(task(10, 0, CommDim::Mp), task(20, 0, CommDim::Mp), task(30, 0, CommDim::Dp)); 2]);
        let r = simulate_iteration(&t, cfg, &cluster(), &node()).unwrap();
        let b = r.breakdown.unwrap();
        assert_eq!(b.totals.iteration_s, 12.0);
        assert_eq!(b.totals.exposed_comm_s, 0.0);
    }

    #[test]
    fn no_compute_blocking_is_comm_sum() {
        let cfg = ParallelConfig::new(4, 1).unwrap();
        let t = trace(cfg, vec![layer(task(0, 8, CommDim::Mp), task(0, 0, CommDim::Mp), task(0, 0, CommDim::Dp))]);
        let r = simulate_iteration(&t, cfg, &cluster(), &node()).unwrap();
        // 2·3/4·8 / 1
        assert_eq!(r.iteration_s(), Some(12.0));
        assert_eq!(exposed_comm_ratio(&r).unwrap_err().to_string(), Error::ZeroCompute.to_string());
    }

    #[test]
    fn equal_blocking_comm_and_compute_gives_ratio_one() {
        let cfg = ParallelConfig::new(4, 1).unwrap();
        let t = trace(cfg, vec![layer(task(120, 8, CommDim::Mp), task(0, 0, CommDim::Mp), task(0, 0, CommDim::Dp))]);
        let r = simulate_iteration(&t, cfg, &cluster(), &node()).unwrap();
        assert_eq!(exposed_comm_ratio(&r).unwrap(), 1.0);
    }

    #[test]
    fn hidden_gradient_traffic_is_not_exposed() {
        let cfg = ParallelConfig::new(1, 4).unwrap();
        // Each wg all-reduce takes 1.5 s; the next layer's backward takes 2 s.
        let l = layer(task(10, 0, CommDim::Mp), task(10, 0, CommDim::Mp), task(10, 1, CommDim::Dp));
        let mut t = trace(cfg, vec![l.clone(), l]);
        t.optimizer_step = task(20, 0, CommDim::Dp);
        let r = simulate_iteration(&t, cfg, &cluster(), &node()).unwrap();
        assert_eq!(r.breakdown.unwrap().totals.exposed_comm_s, 0.0);
    }

    #[test]
    fn tail_gradient_traffic_is_exposed_on_last_layer() {
        let cfg = ParallelConfig::new(1, 4).unwrap();
        let l = layer(task(10, 0, CommDim::Mp), task(10, 0, CommDim::Mp), task(10, 4, CommDim::Dp));
        let t = trace(cfg, vec![l.clone(), l]);
        let r = simulate_iteration(&t, cfg, &cluster(), &node()).unwrap();
        let b = r.breakdown.unwrap();
        // Layer 1 wg comm: 4–10 s; layer 0: queued behind it, 10–16 s; compute ends at 6 s.
        assert_eq!(b.totals.iteration_s, 16.0);
        assert_eq!(b.layers[0].wg.exposed_s, 10.0);
        assert_eq!(b.layers[1].wg.exposed_s, 0.0);
    }

    #[test]
    fn blocking_waits_behind_queued_traffic() {
        let cfg = ParallelConfig::new(1, 4).unwrap();
        let c = cluster();
        // A DP all-reduce and a world all-to-all share the intra-pod link.
        let mut a2a = task(0, 4, CommDim::World);
        a2a.collective = CollectiveKind::AllToAll;
        let t = trace(
            cfg,
            vec![
                layer(task(0, 0, CommDim::Mp), a2a, task(0, 0, CommDim::Dp)),
                layer(task(10, 0, CommDim::Mp), task(10, 0, CommDim::Mp), task(0, 4, CommDim::Dp)),
            ],
        );
        let r = simulate_iteration(&t, cfg, &c, &node()).unwrap();
        let b = r.breakdown.unwrap();
        // wg of layer 1 holds the link from 2 s to 8 s; the 3 s exchange follows.
        assert_eq!(b.layers[0].ig.exposed_s, 9.0);
        assert!(b.totals.iteration_s >= b.link_busy_s.values().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn infeasible_has_no_timings() {
        let cfg = ParallelConfig::new(1, 4).unwrap();
        let mut t = trace(cfg, vec![]);
        t.footprint.parameters = 5000;
        let r = simulate_iteration(&t, cfg, &cluster(), &node()).unwrap();
        assert!(!r.feasible);
        assert!(r.breakdown.is_none());
        let unconstrained = NodeSpec { unconstrained: true, ..node() };
        assert!(simulate_iteration(&t, cfg, &cluster(), &unconstrained).unwrap().feasible);
    }

    #[test]
    fn expanded_memory_slows_compute() {
        let cfg = ParallelConfig::new(1, 4).unwrap();
        let mut t = trace(cfg, vec![layer(task(10, 0, CommDim::Mp), task(0, 0, CommDim::Mp), task(0, 0, CommDim::Dp))]);
        t.footprint.parameters = 2000;
        let n = NodeSpec { em_capacity: 2000, em_bw: 5.0, ..node() };
        let r = simulate_iteration(&t, cfg, &cluster(), &n).unwrap();
        // 1000 B at 10 B/s + 1000 B at 5 B/s → 2000/300 B/s.
        let bw = 2000.0 / 300.0;
        assert_eq!(r.breakdown.as_ref().unwrap().memory_bw, bw);
        assert_eq!(r.iteration_s(), Some(10.0 / bw));
    }
}
