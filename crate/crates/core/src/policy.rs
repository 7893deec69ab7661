//! Compression policies behind one interface: the full cache, the evict-only
//! baselines (StreamingLLM, H2O, SnapKV) and Evict-then-Merge.
//!
//! CAM is not provided; its merge-on-evict of values is a degenerate
//! Evict-then-Merge configuration.
//!
//! H2O here applies top-k on the accumulated global score at every
//! compression event rather than the original greedy per-step schedule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::{CenterEntry, HeadCacheState, LocalToken, LutEntry, Slot};
use crate::config::{CompressionConfig, EvictionMode};
use crate::ems::{self, push_center, ranked, remove_center_slot, retire_slot_entries};
use crate::error::{invalid, Error, Result};
use crate::numerics::{mean_pool_1d, Matrix};
use crate::scoring::ScoreState;

/// StreamingLLM keeps this many initial tokens.
pub const STREAMING_SINKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// No compression; the reference.
    Full,
    StreamingLlm { sinks: usize },
    H2o,
    SnapKv,
    Ems,
}

impl Policy {
    pub fn streaming_llm() -> Self {
        Policy::StreamingLlm { sinks: STREAMING_SINKS }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Full => "full",
            Policy::StreamingLlm { .. } => "streaming",
            Policy::H2o => "h2o",
            Policy::SnapKv => "snapkv",
            Policy::Ems => "ems",
        }
    }

    /// Compresses a freshly prefilled prompt.
    pub fn compress_prefill(
        &self,
        k: &Matrix,
        v: &Matrix,
        scores: ScoreState,
        config: &CompressionConfig,
    ) -> Result<Compressed> {
        match self {
            Policy::Full => {
                let keep: Vec<usize> = (0..k.rows().saturating_sub(config.l_win)).collect();
                keep_layout(k, v, &scores, &keep, config.l_win, false)
            }
            Policy::StreamingLlm { sinks } => streaming_llm_compress(k, v, &scores, *sinks, config),
            Policy::H2o => h2o_compress(k, v, &scores, config),
            Policy::SnapKv => snapkv_compress(k, v, &scores, config),
            Policy::Ems => ems::compress_prefill(k, v, scores, config),
        }
    }

    /// Moves the oldest local token into the compressed region and restores
    /// the budget.
    pub fn graduate(
        &self,
        cache: &mut HeadCacheState,
        scores: &mut ScoreState,
        config: &CompressionConfig,
    ) -> Result<()> {
        match self {
            Policy::Ems => return ems::decode_update(cache, scores, config),
            Policy::Full | Policy::SnapKv => {
                if let Some(t) = cache.locals.pop_front() {
                    push_center(cache, t);
                }
                return Ok(());
            }
            _ => {}
        }
        let Some(t) = cache.locals.pop_front() else {
            return Ok(());
        };
        push_center(cache, t);
        if cache.centers.len() <= config.n_imp() {
            return Ok(());
        }
        let victim = match self {
            Policy::StreamingLlm { sinks } => {
                let mut by_position: Vec<usize> = (0..cache.centers.len()).collect();
                by_position.sort_by_key(|&s| cache.centers[s].position);
                by_position[(*sinks).min(config.n_imp())]
            }
            Policy::H2o => {
                let n = cache.centers.len();
                let mut best = 0;
                for s in 1..n {
                    if scores.s_glo[s] < scores.s_glo[best] {
                        best = s;
                    }
                }
                best
            }
            _ => unreachable!(),
        };
        retire_slot_entries(cache, victim, EvictionMode::Explicit);
        remove_center_slot(cache, scores, victim);
        Ok(())
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Policy::Full),
            "streaming" | "streaming_llm" => Ok(Policy::streaming_llm()),
            "h2o" => Ok(Policy::H2o),
            "snapkv" => Ok(Policy::SnapKv),
            "ems" => Ok(Policy::Ems),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

/// A compressed head: cache plus its lockstep score state.
#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub cache: HeadCacheState,
    pub scores: ScoreState,
    pub compressed: bool,
}

/// Largest odd number not above `min(kernel, n)`.
pub(crate) fn largest_odd_at_most(kernel: usize, n: usize) -> usize {
    let k = kernel.min(n).max(1);
    if k.is_multiple_of(2) {
        k - 1
    } else {
        k
    }
}

/// Builds a cache holding the prompt tokens `keep` (ascending) as centers
/// with their own look-up-table entries, plus the last `l_win` tokens as
/// locals. Scores are compacted to the same layout.
pub(crate) fn keep_layout(
    k: &Matrix,
    v: &Matrix,
    scores: &ScoreState,
    keep: &[usize],
    l_win: usize,
    compressed: bool,
) -> Result<Compressed> {
    let n = k.rows();
    if v.rows() != n || scores.len() != n {
        return Err(invalid("keys, values and scores must cover the same tokens"));
    }
    let local_from = n.saturating_sub(l_win);
    debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(keep.iter().all(|&i| i < local_from));
    let centers = keep
        .iter()
        .map(|&i| CenterEntry::from_token(k.row(i), v.row(i), i))
        .collect();
    let lut = keep
        .iter()
        .enumerate()
        .map(|(slot, &i)| LutEntry {
            position: i,
            slot: Slot::Center(slot),
        })
        .collect();
    let locals = (local_from..n)
        .map(|i| LocalToken {
            key: k.row(i).to_vec(),
            value: v.row(i).to_vec(),
            position: i,
        })
        .collect();
    let mut cache = HeadCacheState::from_parts(k.cols(), centers, locals, lut, n);
    cache.mark_initialized();
    let order: Vec<usize> = keep.iter().copied().chain(local_from..n).collect();
    Ok(Compressed {
        cache,
        scores: scores.select(&order),
        compressed,
    })
}

fn top_k_sorted(score: &[f64], candidates: usize, k: usize) -> Vec<usize> {
    let mut top: Vec<usize> = ranked(score, candidates).into_iter().take(k).collect();
    top.sort_unstable();
    top
}

/// Keeps the first `sinks` tokens and the most recent ones.
pub fn streaming_llm_compress(
    k: &Matrix,
    v: &Matrix,
    scores: &ScoreState,
    sinks: usize,
    config: &CompressionConfig,
) -> Result<Compressed> {
    let n = k.rows();
    let m = n.saturating_sub(config.l_win);
    if n <= config.n_budget {
        return keep_layout(k, v, scores, &(0..m).collect::<Vec<_>>(), config.l_win, false);
    }
    let n_imp = config.n_imp();
    let head = sinks.min(n_imp);
    let keep: Vec<usize> = (0..head).chain(m - (n_imp - head)..m).collect();
    keep_layout(k, v, scores, &keep, config.l_win, true)
}

/// Keeps the top `n_imp` tokens by accumulated global score plus locals.
pub fn h2o_compress(
    k: &Matrix,
    v: &Matrix,
    scores: &ScoreState,
    config: &CompressionConfig,
) -> Result<Compressed> {
    let n = k.rows();
    let m = n.saturating_sub(config.l_win);
    if n <= config.n_budget {
        return keep_layout(k, v, scores, &(0..m).collect::<Vec<_>>(), config.l_win, false);
    }
    let keep = top_k_sorted(&scores.s_glo, m, config.n_imp());
    keep_layout(k, v, scores, &keep, config.l_win, true)
}

/// Keeps the top `n_imp` tokens by pooled local score plus locals. Decode
/// steps never compress, so the cache grows after prefill.
pub fn snapkv_compress(
    k: &Matrix,
    v: &Matrix,
    scores: &ScoreState,
    config: &CompressionConfig,
) -> Result<Compressed> {
    let n = k.rows();
    let m = n.saturating_sub(config.l_win);
    if n <= config.n_budget {
        return keep_layout(k, v, scores, &(0..m).collect::<Vec<_>>(), config.l_win, false);
    }
    let pooled = mean_pool_1d(&scores.local(), largest_odd_at_most(config.kernel_size, n))?;
    let keep = top_k_sorted(&pooled, m, config.n_imp());
    keep_layout(k, v, scores, &keep, config.l_win, true)
}
