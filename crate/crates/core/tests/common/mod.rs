#![allow(dead_code)]

use std::path::PathBuf;

use trainsim::config::{load_cluster, load_model, ClusterConfig};
use trainsim::network::{ClusterSpec, CollectiveAlgo, Topology};
use trainsim::workload::{ModelHyperParams, ModelKind};

pub fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn model(name: &str) -> ModelHyperParams {
    load_model(&configs().join("models").join(name)).unwrap()
}

pub fn cluster(name: &str) -> ClusterConfig {
    load_cluster(&configs().join("clusters").join(name)).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Byte count of tiled GEMM streaming, counted one tile at a time: load the
/// tile, stream the whole other operand past it; write the output once.
pub fn tile_streaming_oracle(u: u128, v: u128, w: u128, s: u128) -> u128 {
    let stream = |tiled: u128, streamed: u128| {
        let mut bytes = 0u128;
        let mut left = tiled;
        while left > 0 {
            let tile = left.min(s);
            bytes += tile + streamed;
            left -= tile;
        }
        bytes
    };
    stream(u, v).min(stream(v, u)) + w
}

/// One ring step: every member sends one logical chunk (a group of global
/// chunk ids moving together) to its successor. Returns the step time: the
/// slowest hop plus latency.
#[allow(clippy::too_many_arguments)]
fn ring_step(
    members: &[usize],
    chunk_of: impl Fn(usize) -> usize,
    chunks: &[Vec<usize>],
    chunk_bytes: f64,
    hop_bw: &dyn Fn(usize, usize) -> f64,
    latency: f64,
    masks: &mut [Vec<u128>],
    reduce: bool,
) -> f64 {
    let p = members.len();
    let sends: Vec<(usize, usize, &Vec<usize>)> =
        (0..p).map(|i| (members[i], members[(i + 1) % p], &chunks[chunk_of(i)])).collect();
    let snapshot: Vec<Vec<u128>> = sends.iter().map(|(from, _, ids)| ids.iter().map(|&c| masks[*from][c]).collect()).collect();
    let mut slowest = 0.0f64;
    for ((from, to, ids), sent) in sends.iter().zip(&snapshot) {
        slowest = slowest.max(chunk_bytes / hop_bw(*from, *to));
        for (&c, &m) in ids.iter().zip(sent) {
            if reduce {
                masks[*to][c] |= m;
            } else {
                masks[*to][c] = m;
            }
        }
    }
    slowest + latency
}

/// Ring reduce-scatter over `members` on `p` logical chunks of `chunk_bytes`
/// each. Member `i` ends up owning `chunks[(i + 1) % p]`.
pub fn oracle_reduce_scatter(
    members: &[usize],
    chunks: &[Vec<usize>],
    chunk_bytes: f64,
    hop_bw: &dyn Fn(usize, usize) -> f64,
    latency: f64,
    masks: &mut [Vec<u128>],
) -> f64 {
    let p = members.len();
    let mut t = 0.0;
    for s in 0..p.saturating_sub(1) {
        t += ring_step(members, |i| (i + p - s) % p, chunks, chunk_bytes, hop_bw, latency, masks, true);
    }
    t
}

/// Ring all-gather, assuming member `i` owns `chunks[(i + 1) % p]`.
pub fn oracle_all_gather(
    members: &[usize],
    chunks: &[Vec<usize>],
    chunk_bytes: f64,
    hop_bw: &dyn Fn(usize, usize) -> f64,
    latency: f64,
    masks: &mut [Vec<u128>],
) -> f64 {
    let p = members.len();
    let mut t = 0.0;
    for s in 0..p.saturating_sub(1) {
        t += ring_step(members, |i| (i + 1 + p - s) % p, chunks, chunk_bytes, hop_bw, latency, masks, false);
    }
    t
}

fn fresh_masks(nodes: usize, chunks: usize) -> Vec<Vec<u128>> {
    (0..nodes).map(|n| vec![1u128 << n; chunks]).collect()
}

fn all_reduced(masks: &[Vec<u128>], nodes: usize) -> bool {
    let full = if nodes == 128 { u128::MAX } else { (1u128 << nodes) - 1 };
    masks.iter().all(|row| row.iter().all(|&m| m == full))
}

/// Flat ring all-reduce over nodes `0..p` where nodes `k*pod..(k+1)*pod` share
/// a pod. Panics if the simulated data does not end fully reduced.
pub fn oracle_ring_allreduce(volume: f64, p: usize, pod: usize, intra: f64, inter: f64, latency: f64) -> f64 {
    let members: Vec<usize> = (0..p).collect();
    let chunks: Vec<Vec<usize>> = (0..p).map(|c| vec![c]).collect();
    let mut masks = fresh_masks(p, p);
    let bw = move |a: usize, b: usize| if a / pod == b / pod { intra } else { inter };
    let c = volume / p as f64;
    let t = oracle_reduce_scatter(&members, &chunks, c, &bw, latency, &mut masks)
        + oracle_all_gather(&members, &chunks, c, &bw, latency, &mut masks);
    assert!(all_reduced(&masks, p), "ring all-reduce left partial sums");
    t
}

/// Hierarchical all-reduce over `span` pods of `q` members each: intra-pod
/// reduce-scatter, per-rank inter-pod ring all-reduce on the shard, intra-pod
/// all-gather. Simultaneous rings on disjoint links take the max step time.
pub fn oracle_hierarchical_allreduce(
    volume: f64,
    q: usize,
    span: usize,
    intra: f64,
    inter: f64,
    latency: f64,
) -> f64 {
    let p = q * span;
    // Global chunk r * span + k is sub-chunk k of shard r.
    let mut masks = fresh_masks(p, p);
    let node = |pod: usize, r: usize| pod * q + r;
    let bw = move |a: usize, b: usize| if a / q == b / q { intra } else { inter };
    let shards: Vec<Vec<usize>> = (0..q).map(|r| (0..span).map(|k| r * span + k).collect()).collect();
    let shard_bytes = volume / q as f64;
    let sub_bytes = shard_bytes / span as f64;

    let intra_phase = |masks: &mut Vec<Vec<u128>>, gather: bool| {
        let mut slowest = 0.0f64;
        for pod in 0..span {
            let members: Vec<usize> = (0..q).map(|r| node(pod, r)).collect();
            let t = if gather {
                oracle_all_gather(&members, &shards, shard_bytes, &bw, latency, masks)
            } else {
                oracle_reduce_scatter(&members, &shards, shard_bytes, &bw, latency, masks)
            };
            slowest = slowest.max(t);
        }
        slowest
    };

    let t1 = intra_phase(&mut masks, false);
    // Member r of each pod now owns shard (r + 1) % q.
    let mut t2 = 0.0f64;
    for r in 0..q {
        let shard = (r + 1) % q;
        let members: Vec<usize> = (0..span).map(|pod| node(pod, r)).collect();
        let subs: Vec<Vec<usize>> = (0..span).map(|k| vec![shard * span + k]).collect();
        let t = oracle_reduce_scatter(&members, &subs, sub_bytes, &bw, latency, &mut masks)
            + oracle_all_gather(&members, &subs, sub_bytes, &bw, latency, &mut masks);
        t2 = t2.max(t);
    }
    let t3 = intra_phase(&mut masks, true);
    assert!(all_reduced(&masks, p), "hierarchical all-reduce left partial sums");
    t1 + t2 + t3
}

pub fn switch_cluster(nodes: u64, pod: u64, intra: f64, inter: f64, latency: f64, algo: CollectiveAlgo) -> ClusterSpec {
    ClusterSpec {
        n_nodes: nodes,
        pod_size: pod,
        topology: Topology::TwoLevelSwitch,
        intra_bw: intra,
        inter_bw: inter,
        torus_dims: None,
        torus_link_bw: 0.0,
        link_latency: latency,
        collective_algo: algo,
    }
}

/// Parameter count written out row by row from the hyperparameters.
pub fn transformer_params_by_hand(hp: &ModelHyperParams) -> u64 {
    assert_eq!(hp.kind, ModelKind::Transformer);
    let d = hp.d_model;
    let q = d * hp.n_heads * hp.d_k;
    let k = d * hp.n_heads * hp.d_k;
    let v = d * hp.n_heads * hp.d_v;
    let o = hp.n_heads * hp.d_v * d;
    let up = d * hp.ff_dim;
    let down = hp.ff_dim * d;
    let embeddings = 2 * hp.vocab * d;
    hp.n_stacks * (q + k + v + o + up + down) + embeddings
}
