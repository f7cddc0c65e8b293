//! Roofline compute model, tiled GEMM memory traffic, and hybrid-memory bandwidth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-node compute and memory resources. Rates are in FLOP/s and bytes/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub perf_peak: f64,
    /// On-chip buffer available for GEMM tiling.
    pub on_chip_bytes: u64,
    pub lm_capacity: u64,
    pub lm_bw: f64,
    /// Expanded memory capacity; zero means no expansion.
    pub em_capacity: u64,
    pub em_bw: f64,
    /// Ignore capacity limits and serve everything from local memory.
    pub unconstrained: bool,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.perf_peak > 0.0) {
            return Err(Error::config("node.perf_peak", "must be positive"));
        }
        if !(self.lm_bw > 0.0) {
            return Err(Error::config("node.lm_bw", "must be positive"));
        }
        if self.em_capacity > 0 && !(self.em_bw > 0.0) {
            return Err(Error::config("node.em_bw", "must be positive when expanded memory is present"));
        }
        if self.on_chip_bytes == 0 {
            return Err(Error::config("node.on_chip_bytes", "must be at least 1 byte"));
        }
        Ok(())
    }

    pub fn capacity(&self) -> u64 {
        if self.unconstrained {
            u64::MAX
        } else {
            self.lm_capacity.saturating_add(self.em_capacity)
        }
    }

    /// Performance/bandwidth ratio at which the roofline saturates.
    pub fn ridge_point(&self, bw: f64) -> f64 {
        self.perf_peak / bw
    }
}

/// FLOPs per byte of memory traffic.
pub fn operational_intensity(flops: f64, traffic: f64) -> Result<f64> {
    if traffic <= 0.0 {
        return Err(Error::UndefinedIntensity);
    }
    Ok(flops / traffic)
}

/// Roofline: `min(perf_peak, oi × bw)`.
pub fn attainable_perf(oi: f64, bw: f64, node: &NodeSpec) -> f64 {
    node.perf_peak.min(oi * bw)
}

pub fn compute_delay(flops: f64, perf: f64) -> Result<f64> {
    if perf <= 0.0 {
        return Err(Error::ZeroPerformance);
    }
    Ok(flops / perf)
}

/// Bytes moved between memory and compute for a GEMM with input operands of
/// `u` and `v` bytes and an output of `w` bytes, given an on-chip buffer of
/// `s` bytes.
///
/// One input is tiled into the buffer and the other is streamed once per
/// tile; the cheaper choice wins and the output is written once.
pub fn gemm_memory_traffic(u: u128, v: u128, w: u128, s: u128) -> Result<u128> {
    if s == 0 {
        return Err(Error::config("node.on_chip_bytes", "buffer size must be at least 1 byte"));
    }
    let tile_u = u.div_ceil(s) * v + u;
    let tile_v = v.div_ceil(s) * u + v;
    Ok(tile_u.min(tile_v) + w)
}

/// Effective bandwidth of local + expanded memory serving `total_bytes`,
/// filling local memory first.
pub fn hybrid_bandwidth(total_bytes: f64, node: &NodeSpec) -> Result<f64> {
    if !(total_bytes > 0.0) {
        return Err(Error::config("total_bytes", "working set must be positive"));
    }
    let lm = node.lm_capacity as f64;
    let capacity = lm + node.em_capacity as f64;
    if total_bytes > capacity {
        return Err(Error::Infeasible { needed: total_bytes as u64, available: node.capacity() });
    }
    let in_lm = total_bytes.min(lm);
    let in_em = total_bytes - in_lm;
    let mut time = in_lm / node.lm_bw;
    if in_em > 0.0 {
        time += in_em / node.em_bw;
    }
    Ok(total_bytes / time)
}
