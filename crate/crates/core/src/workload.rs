//! Layer-level decomposition of Transformer and DLRM models into GEMMs.
//!
//! Every layer is described by the `M×K · K×N` product it performs (or, for
//! non-GEMM layers, by an equivalent operand shape) together with enough
//! metadata to re-shard it for a given (MP, DP) configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Dlrm,
}

/// DLRM-specific shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlrmParams {
    pub num_tables: u64,
    pub rows_per_table: u64,
    pub embedding_dim: u64,
    pub dense_features: u64,
    /// Output width of each bottom MLP layer; the last must equal `embedding_dim`.
    pub bottom_mlp: Vec<u64>,
    /// Output width of each top MLP layer.
    pub top_mlp: Vec<u64>,
}

/// Model hyperparameters, as read from a model config file.
///
/// Transformer fields are ignored for DLRM models and default to zero when
/// absent from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHyperParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: ModelKind,
    #[serde(default)]
    pub d_model: u64,
    #[serde(default)]
    pub n_stacks: u64,
    #[serde(default)]
    pub n_heads: u64,
    #[serde(default)]
    pub d_k: u64,
    #[serde(default)]
    pub d_v: u64,
    /// Full (unsharded) MLP inner dimension.
    #[serde(default)]
    pub ff_dim: u64,
    #[serde(default)]
    pub vocab: u64,
    #[serde(default = "one")]
    pub seq: u64,
    /// Samples resident at once on a node (micro-batch); sizes activation memory.
    pub mini_batch: u64,
    pub global_batch: u64,
    #[serde(default = "two")]
    pub bytes_per_element: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dlrm: Option<DlrmParams>,
}

fn one() -> u64 {
    1
}

fn two() -> u64 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Gemm,
    Elementwise,
    TableLookup,
    TableUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fp,
    Ig,
    Wg,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Fp, Phase::Ig, Phase::Wg];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Fp => "fp",
            Phase::Ig => "ig",
            Phase::Wg => "wg",
        }
    }
}

/// How a K or N dimension responds to sharding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Replicated on every node.
    Fixed,
    /// Split across the model-parallel group. `units` is the hyperparameter
    /// that must divide evenly (heads, MLP width, vocabulary).
    Model { field: &'static str, units: u64 },
    /// Equal to the row count M (activation × activation products).
    Rows,
}

/// Which batch a layer's rows are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowScope {
    /// Rows of the node's data-parallel replica.
    Replica,
    /// Rows of the whole global batch (model-parallel tables serving every sample).
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sharding {
    pub k: Axis,
    pub n: Axis,
    pub rows: RowScope,
    /// Rows contributed by a single sample (sequence length for Transformers).
    pub rows_per_sample: u64,
    /// Stacks are distributed across every node of the cluster (DLRM tables).
    pub split_stacks: bool,
}

/// Placement of a layer's trainable weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    /// No trainable weights (activation × activation or element-wise).
    None,
    /// Replicated across the data-parallel dimension; gradients are reduced there.
    Replicated,
    /// Each node owns a disjoint slice; no gradient reduction needed.
    Distributed,
}

/// Blocking communication attached to a layer's forward and input-gradient phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationSync {
    None,
    /// Model-parallel all-reduce of the phase's output activation.
    ModelAllReduce { fp: bool, ig: bool },
    /// Cluster-wide all-to-all of the layer output (fp) and its gradient (ig).
    AllToAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
    pub stacks: u64,
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub bytes_per_element: u64,
    pub weights: Weights,
    pub sync: ActivationSync,
    pub sharding: Sharding,
    /// Member of the repeated block (unrolled per stack in traces).
    pub block: bool,
}

impl LayerDescriptor {
    pub fn weight_params(&self) -> u64 {
        match self.weights {
            Weights::None => 0,
            _ => self.k * self.n * self.stacks,
        }
    }

    pub fn output_elements(&self) -> u64 {
        self.m * self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    pub kind: ModelKind,
    pub layers: Vec<LayerDescriptor>,
    pub total_params: u64,
    pub global_batch: u64,
    pub mini_batch: u64,
}

impl LayerGraph {
    fn new(hp: &ModelHyperParams, layers: Vec<LayerDescriptor>) -> Self {
        let total_params = layers.iter().map(LayerDescriptor::weight_params).sum();
        LayerGraph {
            kind: hp.kind,
            layers,
            total_params,
            global_batch: hp.global_batch,
            mini_batch: hp.mini_batch,
        }
    }
}

impl ModelHyperParams {
    /// Checks positivity and divisibility for a model-parallel degree.
    pub fn validate(&self, mp: u64) -> Result<()> {
        let positive = |field: &str, v: u64| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("mini_batch", self.mini_batch)?;
        positive("global_batch", self.global_batch)?;
        positive("seq", self.seq)?;
        positive("bytes_per_element", self.bytes_per_element)?;
        positive("mp", mp)?;
        match self.kind {
            ModelKind::Transformer => {
                for (field, v) in [
                    ("d_model", self.d_model),
                    ("n_stacks", self.n_stacks),
                    ("n_heads", self.n_heads),
                    ("d_k", self.d_k),
                    ("d_v", self.d_v),
                    ("ff_dim", self.ff_dim),
                    ("vocab", self.vocab),
                ] {
                    positive(field, v)?;
                }
                for (field, v) in [("n_heads", self.n_heads), ("ff_dim", self.ff_dim), ("vocab", self.vocab)] {
                    if v % mp != 0 {
                        return Err(Error::config(field, format!("{v} is not divisible by MP degree {mp}")));
                    }
                }
            }
            ModelKind::Dlrm => {
                let p = self.dlrm.as_ref().ok_or_else(|| Error::config("dlrm", "missing DLRM parameters"))?;
                positive("dlrm.num_tables", p.num_tables)?;
                positive("dlrm.rows_per_table", p.rows_per_table)?;
                positive("dlrm.embedding_dim", p.embedding_dim)?;
                positive("dlrm.dense_features", p.dense_features)?;
                if p.bottom_mlp.is_empty() || p.top_mlp.is_empty() {
                    return Err(Error::config("dlrm", "bottom_mlp and top_mlp need at least one layer"));
                }
                if p.bottom_mlp.iter().chain(&p.top_mlp).any(|&w| w == 0) {
                    return Err(Error::config("dlrm", "MLP widths must be at least 1"));
                }
                if p.bottom_mlp.last() != Some(&p.embedding_dim) {
                    return Err(Error::config("dlrm.bottom_mlp", "last width must equal embedding_dim"));
                }
            }
        }
        Ok(())
    }
}

/// Builds the model graph for whichever kind `hp` describes.
pub fn build_graph(hp: &ModelHyperParams) -> Result<LayerGraph> {
    match hp.kind {
        ModelKind::Transformer => build_transformer(hp),
        ModelKind::Dlrm => build_dlrm(hp),
    }
}

/// Decomposes a Megatron-style Transformer into its fourteen layer rows.
///
/// Rows marked as part of the repeated block carry `stacks = n_stacks`; the
/// two embeddings appear once. M is `mini_batch × seq` throughout.
pub fn build_transformer(hp: &ModelHyperParams) -> Result<LayerGraph> {
    if hp.kind != ModelKind::Transformer {
        return Err(Error::config("kind", "expected a transformer model"));
    }
    hp.validate(1)?;

    let rows = hp.mini_batch * hp.seq;
    let d = hp.d_model;
    let hk = hp.n_heads * hp.d_k;
    let hv = hp.n_heads * hp.d_v;
    let heads = |units| Axis::Model { field: "n_heads", units };
    let shard = |k, n| Sharding { k, n, rows: RowScope::Replica, rows_per_sample: hp.seq, split_stacks: false };

    let layer = |name: &str, kind, block: bool, k: u64, n: u64, weights, sync, sharding| LayerDescriptor {
        name: name.to_string(),
        kind,
        stacks: if block { hp.n_stacks } else { 1 },
        m: rows,
        k,
        n,
        bytes_per_element: hp.bytes_per_element,
        weights,
        sync,
        sharding,
        block,
    };
    use ActivationSync as S;
    use LayerKind::*;
    let vocab = Axis::Model { field: "vocab", units: hp.vocab };
    let ff = Axis::Model { field: "ff_dim", units: hp.ff_dim };
    let fp_sync = S::ModelAllReduce { fp: true, ig: false };
    let ig_sync = S::ModelAllReduce { fp: false, ig: true };

    let layers = vec![
        layer("input_embedding", TableLookup, false, hp.vocab, d, Weights::Replicated, fp_sync, shard(vocab, Axis::Fixed)),
        layer("layer_norm_1", Elementwise, true, 1, d, Weights::None, S::None, shard(Axis::Fixed, Axis::Fixed)),
        layer("query_proj", Gemm, true, d, hk, Weights::Replicated, ig_sync, shard(Axis::Fixed, heads(hp.n_heads))),
        layer("key_proj", Gemm, true, d, hk, Weights::Replicated, S::None, shard(Axis::Fixed, heads(hp.n_heads))),
        layer("value_proj", Gemm, true, d, hv, Weights::Replicated, S::None, shard(Axis::Fixed, heads(hp.n_heads))),
        // Table dimensions taken as written: K = h·d_k, N = b·seq.
        layer("attention_scores", Gemm, true, hk, rows, Weights::None, S::None, shard(heads(hp.n_heads), Axis::Rows)),
        layer("attention_values", Gemm, true, rows, hv, Weights::None, S::None, shard(Axis::Rows, heads(hp.n_heads))),
        layer("attention_output", Gemm, true, hv, d, Weights::Replicated, fp_sync, shard(heads(hp.n_heads), Axis::Fixed)),
        layer("residual_1", Elementwise, true, 1, d, Weights::None, S::None, shard(Axis::Fixed, Axis::Fixed)),
        layer("layer_norm_2", Elementwise, true, 1, d, Weights::None, S::None, shard(Axis::Fixed, Axis::Fixed)),
        layer("mlp_up", Gemm, true, d, hp.ff_dim, Weights::Replicated, ig_sync, shard(Axis::Fixed, ff)),
        layer("mlp_down", Gemm, true, hp.ff_dim, d, Weights::Replicated, fp_sync, shard(ff, Axis::Fixed)),
        layer("residual_2", Elementwise, true, 1, hv, Weights::None, S::None, shard(Axis::Fixed, Axis::Fixed)),
        layer("output_embedding", TableUpdate, false, d, hp.vocab, Weights::Replicated, ig_sync, shard(Axis::Fixed, vocab)),
    ];
    Ok(LayerGraph::new(hp, layers))
}

/// Decomposes a DLRM into embedding lookups, bottom MLP, feature interaction
/// and top MLP.
///
/// Embedding tables are distributed across the whole cluster and exchanged
/// with an all-to-all; MLP weights are replicated and reduced across DP.
pub fn build_dlrm(hp: &ModelHyperParams) -> Result<LayerGraph> {
    if hp.kind != ModelKind::Dlrm {
        return Err(Error::config("kind", "expected a dlrm model"));
    }
    hp.validate(1)?;
    let p = hp.dlrm.as_ref().expect("validated");
    let b = hp.mini_batch;
    let fixed = Sharding { k: Axis::Fixed, n: Axis::Fixed, rows: RowScope::Replica, rows_per_sample: 1, split_stacks: false };
    let mlp = |name: String, k: u64, n: u64| LayerDescriptor {
        name,
        kind: LayerKind::Gemm,
        stacks: 1,
        m: b,
        k,
        n,
        bytes_per_element: hp.bytes_per_element,
        weights: Weights::Replicated,
        sync: ActivationSync::None,
        sharding: fixed,
        block: false,
    };

    let mut layers = vec![LayerDescriptor {
        name: "embedding_tables".into(),
        kind: LayerKind::TableLookup,
        stacks: p.num_tables,
        m: b,
        k: p.rows_per_table,
        n: p.embedding_dim,
        bytes_per_element: hp.bytes_per_element,
        weights: Weights::Distributed,
        sync: ActivationSync::AllToAll,
        sharding: Sharding { rows: RowScope::Global, split_stacks: true, ..fixed },
        block: false,
    }];

    let mut width = p.dense_features;
    for (i, &out) in p.bottom_mlp.iter().enumerate() {
        layers.push(mlp(format!("bottom_mlp_{i}"), width, out));
        width = out;
    }

    // Pairwise dot products between the dense vector and every table's output.
    let features = p.num_tables + 1;
    layers.push(LayerDescriptor {
        name: "interaction".into(),
        kind: LayerKind::Gemm,
        stacks: 1,
        m: b * features,
        k: p.embedding_dim,
        n: features,
        bytes_per_element: hp.bytes_per_element,
        weights: Weights::None,
        sync: ActivationSync::None,
        sharding: Sharding { rows_per_sample: features, ..fixed },
        block: false,
    });

    width = p.embedding_dim + features * (features - 1) / 2;
    for (i, &out) in p.top_mlp.iter().enumerate() {
        layers.push(mlp(format!("top_mlp_{i}"), width, out));
        width = out;
    }
    Ok(LayerGraph::new(hp, layers))
}

/// Floating-point operations of one training phase of `layer`, all stacks included.
///
/// One multiply-accumulate counts as two FLOPs; input- and weight-gradient
/// GEMMs cost the same as the forward product.
pub fn layer_flops(layer: &LayerDescriptor, phase: Phase) -> u128 {
    let (m, k, n, s) = (layer.m as u128, layer.k as u128, layer.n as u128, layer.stacks as u128);
    match layer.kind {
        LayerKind::Gemm | LayerKind::TableUpdate => 2 * m * k * n * s,
        LayerKind::Elementwise => m * n * s,
        LayerKind::TableLookup => match phase {
            Phase::Fp | Phase::Wg => m * n * s,
            Phase::Ig => 0,
        },
    }
}
