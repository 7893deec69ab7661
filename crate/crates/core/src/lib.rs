//! Evict-then-Merge KV cache compression.
//!
//! The crate implements a single-layer, multi-head attention engine whose KV
//! cache is compressed by a pluggable [`Policy`]. The headline policy,
//! [`Policy::Ems`], ranks tokens by a Global-Local importance score, evicts
//! irrelevant tokens, and merges redundant ones into shared class-center
//! entries that are expanded through a position look-up-table at attention
//! time. Evict-only baselines (StreamingLLM, H2O, SnapKV) share the same
//! interface for controlled comparisons.
//!
//! The harness side ([`trace`], [`synth`], [`experiment`], [`report`]) reads
//! and writes binary KVTR traces, generates synthetic workloads, runs every
//! policy against a full-cache reference and emits JSON or CSV reports.

pub mod analysis;
pub mod attention;
pub mod cache;
pub mod config;
pub mod ems;
pub mod error;
pub mod experiment;
pub mod numerics;
pub mod policy;
pub mod report;
pub mod scoring;
pub mod synth;
pub mod trace;

pub use analysis::{redundancy_matrix, redundancy_rate, sparsity_rate, HeadDiagnostics, RedundancyMatrix};
pub use attention::{
    apply_rope, attend_expanded, decode_step, prefill, prefill_with, run_prompt, AttentionOutput,
    ExpandedAttention, PrefillResult, PromptPass, RopeParams,
};
pub use cache::{CacheDump, CenterEntry, HeadCacheState, LocalToken, LutEntry, MemoryFootprint, Slot};
pub use config::{CompressionConfig, EvictionMode, PositionMode};
pub use error::{Error, Result};
pub use experiment::{run_experiment, MetricsReport};
pub use numerics::Matrix;
pub use policy::{Compressed, Policy};
pub use scoring::ScoreState;
pub use trace::{Trace, TraceStep};
