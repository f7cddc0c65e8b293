//! Analytical simulator for distributed DL training clusters.
//!
//! A model is decomposed into per-layer GEMMs ([`workload`]), sharded for a
//! model/data-parallel split with ZeRO footprints ([`strategy`]), costed with
//! a roofline and tiled-traffic model ([`perfmodel`]) and a collective model
//! ([`network`]), and scheduled on compute and link timelines ([`engine`]).
//! [`config`] and [`sweep`] drive parameter sweeps and CSV output.

// Comparisons like `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod engine;
pub mod error;
pub mod network;
pub mod perfmodel;
pub mod strategy;
pub mod sweep;
pub mod workload;

pub use engine::{exposed_comm_ratio, simulate_iteration, IterationResult};
pub use error::{Error, Result};
pub use network::ClusterSpec;
pub use perfmodel::NodeSpec;
pub use strategy::{ParallelConfig, ZeroStage};
pub use workload::{LayerGraph, ModelHyperParams};
