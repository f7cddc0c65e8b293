//! Model, cluster and sweep configuration files.
//!
//! Files are TOML; a `.json` extension selects the JSON form of the same
//! schema. Cluster files use human units (GB, GB/s, TFLOPS, MB, µs).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ClusterSpec, CollectiveAlgo, Topology};
use crate::perfmodel::NodeSpec;
use crate::strategy::{ParallelConfig, ZeroStage};
use crate::workload::{ModelHyperParams, ModelKind};

pub const GB: f64 = 1e9;
pub const MB: f64 = 1e6;
pub const TFLOPS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Toml,
    Json,
}

fn format_of(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
        _ => Format::Toml,
    }
}

fn parse_err(path: &Path, reason: impl fmt::Display) -> Error {
    Error::Parse { path: path.display().to_string(), reason: reason.to_string() }
}

/// Reads and deserializes a config file, choosing the format by extension.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse(&text, format_of(path)).map_err(|r| parse_err(path, r))
}

fn parse<T: DeserializeOwned>(text: &str, format: Format) -> std::result::Result<T, String> {
    match format {
        Format::Toml => toml::from_str(text).map_err(|e| e.to_string()),
        Format::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Parse { path: "<toml>".into(), reason: e.to_string() })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse { path: "<json>".into(), reason: e.to_string() })
}

pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    parse(text, Format::Toml).map_err(|r| Error::Parse { path: "<toml>".into(), reason: r })
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    parse(text, Format::Json).map_err(|r| Error::Parse { path: "<json>".into(), reason: r })
}

/// Loads and validates a model file.
pub fn load_model(path: &Path) -> Result<ModelHyperParams> {
    let hp: ModelHyperParams = load(path)?;
    hp.validate(1)?;
    Ok(hp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub peak_tflops: f64,
    pub on_chip_mb: f64,
    pub lm_capacity_gb: f64,
    pub lm_bw_gbps: f64,
    #[serde(default)]
    pub em_capacity_gb: f64,
    #[serde(default)]
    pub em_bw_gbps: f64,
    #[serde(default)]
    pub unconstrained_memory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub nodes: u64,
    #[serde(default)]
    pub pod_size: u64,
    pub topology: Topology,
    #[serde(default)]
    pub intra_bw_gbps: f64,
    #[serde(default)]
    pub inter_bw_gbps: f64,
    #[serde(default)]
    pub latency_us: f64,
    pub collective: CollectiveAlgo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus_dims: Option<[u64; 3]>,
    #[serde(default)]
    pub torus_link_bw_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub name: String,
    pub node: NodeConfig,
    pub network: NetworkConfig,
}

impl ClusterConfig {
    pub fn node_spec(&self) -> NodeSpec {
        let n = &self.node;
        NodeSpec {
            perf_peak: n.peak_tflops * TFLOPS,
            on_chip_bytes: (n.on_chip_mb * MB).round() as u64,
            lm_capacity: (n.lm_capacity_gb * GB).round() as u64,
            lm_bw: n.lm_bw_gbps * GB,
            em_capacity: (n.em_capacity_gb * GB).round() as u64,
            em_bw: n.em_bw_gbps * GB,
            unconstrained: n.unconstrained_memory,
        }
    }

    pub fn cluster_spec(&self) -> ClusterSpec {
        let n = &self.network;
        let pod_size = match n.topology {
            Topology::SingleSwitch if n.pod_size == 0 => n.nodes,
            Topology::Torus3d if n.pod_size == 0 => n.nodes,
            _ => n.pod_size,
        };
        ClusterSpec {
            n_nodes: n.nodes,
            pod_size,
            topology: n.topology,
            intra_bw: n.intra_bw_gbps * GB,
            inter_bw: n.inter_bw_gbps * GB,
            torus_dims: n.torus_dims,
            torus_link_bw: n.torus_link_bw_gbps * GB,
            link_latency: n.latency_us * 1e-6,
            collective_algo: n.collective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.node_spec().validate()?;
        self.cluster_spec().validate()
    }

    /// Strategy used when none is given: MP fills one pod for Transformers,
    /// DLRM runs pure DP with distributed tables.
    pub fn default_strategy(&self, kind: ModelKind) -> Result<ParallelConfig> {
        let n = self.network.nodes;
        let mp = match kind {
            ModelKind::Dlrm => 1,
            ModelKind::Transformer => self.cluster_spec().effective_pod().min(n),
        };
        ParallelConfig::new(mp, n / mp.max(1))
    }
}

pub fn load_cluster(path: &Path) -> Result<ClusterConfig> {
    let c: ClusterConfig = load(path)?;
    c.validate()?;
    Ok(c)
}

/// One value on a sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Text(String),
}

impl AxisValue {
    fn number(&self, path: &str) -> Result<f64> {
        match self {
            AxisValue::Number(v) => Ok(*v),
            AxisValue::Text(t) => t.trim().parse().map_err(|_| Error::config(path, format!("`{t}` is not a number"))),
        }
    }

    fn text(&self) -> String {
        match self {
            AxisValue::Number(v) => format_float(*v),
            AxisValue::Text(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub path: String,
    pub values: Vec<AxisValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    /// reference / row
    Speedup,
    /// row / reference
    Runtime,
}

impl Normalize {
    pub fn column(self) -> &'static str {
        match self {
            Normalize::Speedup => "speedup",
            Normalize::Runtime => "normalized_runtime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base strategy, e.g. "8x128"; defaults per model kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mp_dp: Option<String>,
    #[serde(default)]
    pub zero: ZeroStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<Normalize>,
    /// Fixed intra + inter bandwidth for the `network.bw_ratio` axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_bw_gbps: Option<f64>,
    /// Overrides on the base point that define the normalization reference.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference: BTreeMap<String, AxisValue>,
    #[serde(default)]
    pub axes: Vec<Axis>,
}

pub const AXIS_PATHS: [&str; 13] = [
    "cluster",
    "mp_dp",
    "network.bw_ratio",
    "network.inter_bw_gbps",
    "network.intra_bw_gbps",
    "network.latency_us",
    "node.em_bw_gbps",
    "node.em_capacity_gb",
    "node.lm_bw_gbps",
    "node.lm_capacity_gb",
    "node.on_chip_mb",
    "node.peak_scale",
    "zero",
];

fn check_path(path: &str) -> Result<()> {
    if AXIS_PATHS.contains(&path) {
        Ok(())
    } else {
        Err(Error::config(path, format!("unknown sweep parameter; valid paths: {}", AXIS_PATHS.join(", "))))
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for axis in &self.axes {
            check_path(&axis.path)?;
            if axis.values.is_empty() {
                return Err(Error::config(&axis.path, "axis needs at least one value"));
            }
            if seen.contains(&axis.path.as_str()) {
                return Err(Error::config(&axis.path, "axis listed twice"));
            }
            seen.push(&axis.path);
        }
        for path in self.reference.keys() {
            check_path(path)?;
        }
        let uses_ratio = self.axes.iter().any(|a| a.path == "network.bw_ratio") || self.reference.contains_key("network.bw_ratio");
        if uses_ratio && !self.total_bw_gbps.is_some_and(|t| t > 0.0) {
            return Err(Error::config("total_bw_gbps", "the bw_ratio axis needs a positive total bandwidth"));
        }
        if let Some(s) = &self.mp_dp {
            s.parse::<ParallelConfig>()?;
        }
        Ok(())
    }
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec> {
    let s: SweepSpec = load(path)?;
    s.validate()?;
    Ok(s)
}

/// A fully resolved simulation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub cluster: ClusterConfig,
    pub config: ParallelConfig,
    pub zero: ZeroStage,
}

/// Applies one `path = value` override to a point. `base_dir` resolves
/// relative cluster file paths.
pub fn apply(point: &mut Point, path: &str, value: &AxisValue, spec: &SweepSpec, base_dir: &Path) -> Result<()> {
    check_path(path)?;
    match path {
        "mp_dp" => point.config = value.text().parse()?,
        "zero" => {
            let z = value.number(path)?;
            if z.fract() != 0.0 || !(0.0..=3.0).contains(&z) {
                return Err(Error::config(path, format!("stage {z} is not in 0..=3")));
            }
            point.zero = ZeroStage::from_index(z as u8)?;
        }
        "cluster" => {
            let file = resolve(base_dir, &value.text());
            point.cluster = load_cluster(&file)?;
        }
        _ => {
            let v = value.number(path)?;
            let (node, net) = (&mut point.cluster.node, &mut point.cluster.network);
            match path {
                "node.peak_scale" => node.peak_tflops *= v,
                "node.lm_bw_gbps" => node.lm_bw_gbps = v,
                "node.lm_capacity_gb" => node.lm_capacity_gb = v,
                "node.em_bw_gbps" => node.em_bw_gbps = v,
                "node.em_capacity_gb" => node.em_capacity_gb = v,
                "node.on_chip_mb" => node.on_chip_mb = v,
                "network.intra_bw_gbps" => net.intra_bw_gbps = v,
                "network.inter_bw_gbps" => net.inter_bw_gbps = v,
                "network.latency_us" => net.latency_us = v,
                "network.bw_ratio" => {
                    let total = spec.total_bw_gbps.ok_or_else(|| Error::config("total_bw_gbps", "required for bw_ratio"))?;
                    if !(v > 0.0) {
                        return Err(Error::config(path, "ratio must be positive"));
                    }
                    net.intra_bw_gbps = total * v / (1.0 + v);
                    net.inter_bw_gbps = total / (1.0 + v);
                }
                _ => unreachable!("checked above"),
            }
        }
    }
    Ok(())
}

fn resolve(base_dir: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Renders an axis value for CSV output.
pub fn render_value(path: &str, value: &AxisValue) -> String {
    match path {
        "mp_dp" => value.text().parse::<ParallelConfig>().map(|c| c.to_string()).unwrap_or_else(|_| value.text()),
        "cluster" => {
            let t = value.text();
            Path::new(&t).file_stem().and_then(|s| s.to_str()).map(str::to_string).unwrap_or(t)
        }
        _ => value.text(),
    }
}

/// Formats like C's `%.9g`.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}
