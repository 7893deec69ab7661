//! Lockstep experiments: a full-cache reference and any number of policies
//! replay the same trace, and every decode output is compared against the
//! reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{redundancy_rate_of, sparsity_rate, HeadDiagnostics};
use crate::attention::{decode_step, run_prompt, ExpandedAttention};
use crate::cache::MemoryFootprint;
use crate::config::CompressionConfig;
use crate::error::Result;
use crate::numerics::{dot, l2_norm};
use crate::policy::{Compressed, Policy};
use crate::trace::{Block, Trace};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentOptions {
    /// Echoed into the report; the engine itself is deterministic.
    pub seed: Option<u64>,
    /// Compute per-head sparsity and redundancy rates of the prompt.
    pub diagnostics: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            seed: None,
            diagnostics: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub num_heads: usize,
    pub head_dim: usize,
    pub prompt_tokens: usize,
    pub decode_steps: usize,
}

/// One decode step of one head under one policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based decode step.
    pub step: usize,
    pub head: usize,
    /// Logical position of the decoded token.
    pub position: usize,
    pub l2_error: f64,
    pub cosine_error: f64,
    pub argmax_match: bool,
    pub reference_argmax: Option<usize>,
    /// Whether the reference's argmax position is still live in this cache.
    pub reference_argmax_retained: bool,
    pub memory: MemoryFootprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub records: usize,
    pub mean_l2_error: f64,
    pub max_l2_error: f64,
    pub mean_cosine_error: f64,
    /// Fraction of records whose argmax matches the reference (1 when empty).
    pub argmax_accuracy: f64,
    pub all_argmax_match: bool,
    /// Fraction of records whose reference argmax is still cached.
    pub retention_rate: f64,
    /// Summed over heads after the last step.
    pub final_stored_entries: usize,
    pub final_total_bytes: usize,
    pub peak_total_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub policy: String,
    pub compressed_heads: usize,
    /// Per head, right after prefill compression.
    pub prefill_memory: Vec<MemoryFootprint>,
    /// Ordered by step, then head.
    pub steps: Vec<StepRecord>,
    pub aggregate: AggregateMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub config: CompressionConfig,
    pub trace: TraceSummary,
    pub diagnostics: Vec<HeadDiagnostics>,
    pub policies: Vec<PolicyMetrics>,
}

impl MetricsReport {
    pub fn policy(&self, name: &str) -> Option<&PolicyMetrics> {
        self.policies.iter().find(|p| p.policy == name)
    }
}

pub fn run_experiment(trace: &Trace, policies: &[Policy], config: &CompressionConfig) -> Result<MetricsReport> {
    run_experiment_with(trace, policies, config, &ExperimentOptions::default())
}

pub fn run_experiment_with(
    trace: &Trace,
    policies: &[Policy],
    config: &CompressionConfig,
    options: &ExperimentOptions,
) -> Result<MetricsReport> {
    trace.validate()?;
    config.validate()?;
    let heads = (0..trace.num_heads)
        .into_par_iter()
        .map(|h| run_head(trace, h, policies, config, options))
        .collect::<Result<Vec<_>>>()?;

    let diagnostics = heads.iter().filter_map(|h| h.diagnostics).collect();
    let steps = trace.decode_steps().len();
    let policies = policies
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let runs: Vec<&PolicyHeadRun> = heads.iter().map(|h| &h.runs[pi]).collect();
            let mut records = Vec::with_capacity(steps * runs.len());
            for s in 0..steps {
                records.extend(runs.iter().map(|r| r.steps[s]));
            }
            let prefill_memory: Vec<MemoryFootprint> = runs.iter().map(|r| r.prefill_memory).collect();
            let aggregate = aggregate(&records, &prefill_memory, runs.len());
            PolicyMetrics {
                policy: p.name().to_string(),
                compressed_heads: runs.iter().filter(|r| r.compressed).count(),
                prefill_memory,
                steps: records,
                aggregate,
            }
        })
        .collect();

    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: options.seed,
        config: config.clone(),
        trace: TraceSummary {
            num_heads: trace.num_heads,
            head_dim: trace.head_dim,
            prompt_tokens: trace.prompt_len(),
            decode_steps: steps,
        },
        diagnostics,
        policies,
    })
}

/// Per-head sparsity (of the Global-Local prompt score) and redundancy.
pub fn analyze_trace(trace: &Trace, config: &CompressionConfig) -> Result<Vec<HeadDiagnostics>> {
    trace.validate()?;
    config.validate()?;
    (0..trace.num_heads)
        .into_par_iter()
        .map(|h| {
            let q = trace.head_block(0, h, Block::Q)?;
            let k = trace.head_block(0, h, Block::K)?;
            let v = trace.head_block(0, h, Block::V)?;
            let pass = run_prompt(&q, &k, &v, config, false)?;
            diagnose(h, &pass.scores.combined()?, &k, &v, config)
        })
        .collect()
}

fn diagnose(
    head: usize,
    score: &[f64],
    k: &crate::numerics::Matrix,
    v: &crate::numerics::Matrix,
    config: &CompressionConfig,
) -> Result<HeadDiagnostics> {
    Ok(HeadDiagnostics {
        head,
        sparsity_rate: sparsity_rate(score, config.zeta)?,
        redundancy_rate: redundancy_rate_of(k, v, config.tau)?,
    })
}

struct HeadRun {
    diagnostics: Option<HeadDiagnostics>,
    runs: Vec<PolicyHeadRun>,
}

struct PolicyHeadRun {
    compressed: bool,
    prefill_memory: MemoryFootprint,
    steps: Vec<StepRecord>,
}

fn run_head(
    trace: &Trace,
    head: usize,
    policies: &[Policy],
    config: &CompressionConfig,
    options: &ExperimentOptions,
) -> Result<HeadRun> {
    let q = trace.head_block(0, head, Block::Q)?;
    let k = trace.head_block(0, head, Block::K)?;
    let v = trace.head_block(0, head, Block::V)?;
    let pass = run_prompt(&q, &k, &v, config, false)?;
    let diagnostics = if options.diagnostics {
        Some(diagnose(head, &pass.scores.combined()?, &k, &v, config)?)
    } else {
        None
    };

    let mut reference = Policy::Full.compress_prefill(&k, &v, pass.scores.clone(), config)?;
    let mut states: Vec<Compressed> = policies
        .iter()
        .map(|p| p.compress_prefill(&k, &v, pass.scores.clone(), config))
        .collect::<Result<_>>()?;
    let mut runs: Vec<PolicyHeadRun> = states
        .iter()
        .map(|s| PolicyHeadRun {
            compressed: s.compressed,
            prefill_memory: s.cache.memory(),
            steps: Vec::with_capacity(trace.decode_steps().len()),
        })
        .collect();

    for t in 1..trace.steps.len() {
        let qt = trace.head_token(t, head, Block::Q);
        let kt = trace.head_token(t, head, Block::K);
        let vt = trace.head_token(t, head, Block::V);
        let want = decode_step(qt, kt, vt, &mut reference.cache, &mut reference.scores, &Policy::Full, config)?;
        let want_argmax = want.argmax_position();
        for ((policy, state), run) in policies.iter().zip(states.iter_mut()).zip(runs.iter_mut()) {
            let got = decode_step(qt, kt, vt, &mut state.cache, &mut state.scores, policy, config)?;
            run.steps.push(record(t, head, &want, want_argmax, &got, state));
        }
    }
    Ok(HeadRun { diagnostics, runs })
}

fn record(
    step: usize,
    head: usize,
    want: &ExpandedAttention,
    want_argmax: Option<usize>,
    got: &ExpandedAttention,
    state: &Compressed,
) -> StepRecord {
    let diff: Vec<f64> = got.output.iter().zip(&want.output).map(|(a, b)| a - b).collect();
    StepRecord {
        step,
        head,
        position: state.cache.next_position() - 1,
        l2_error: l2_norm(&diff),
        cosine_error: cosine_error(&got.output, &want.output),
        argmax_match: got.argmax_position() == want_argmax,
        reference_argmax: want_argmax,
        reference_argmax_retained: want_argmax.is_some_and(|p| state.cache.covers_position(p)),
        memory: state.cache.memory(),
    }
}

/// `1 - cos(a, b)`; exactly 0 for identical vectors, 1 when exactly one is
/// zero.
pub fn cosine_error(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    (1.0 - (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)).max(0.0)
}

fn aggregate(records: &[StepRecord], prefill: &[MemoryFootprint], heads: usize) -> AggregateMetrics {
    let n = records.len();
    let mean = |f: fn(&StepRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let frac = |f: fn(&StepRecord) -> bool| {
        if n == 0 {
            1.0
        } else {
            records.iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    let last: Vec<MemoryFootprint> = if n == 0 {
        prefill.to_vec()
    } else {
        records[n - heads..].iter().map(|r| r.memory).collect()
    };
    let prefill_total: usize = prefill.iter().map(|m| m.total_bytes).sum();
    let peak = records
        .chunks(heads.max(1))
        .map(|c| c.iter().map(|r| r.memory.total_bytes).sum::<usize>())
        .fold(prefill_total, usize::max);
    AggregateMetrics {
        records: n,
        mean_l2_error: mean(|r| r.l2_error),
        max_l2_error: records.iter().map(|r| r.l2_error).fold(0.0, f64::max),
        mean_cosine_error: mean(|r| r.cosine_error),
        argmax_accuracy: frac(|r| r.argmax_match),
        all_argmax_match: records.iter().all(|r| r.argmax_match),
        retention_rate: frac(|r| r.reference_argmax_retained),
        final_stored_entries: last.iter().map(|m| m.stored_entries).sum(),
        final_total_bytes: last.iter().map(|m| m.total_bytes).sum(),
        peak_total_bytes: peak,
    }
}
