//! Causal attention over a compressed, look-up-table expanded KV cache.
//!
//! Keys are stored raw (pre-RoPE). Rotary encoding is applied on the fly,
//! at each look-up-table entry's own position in `WithPos` mode or at the
//! center's position in `WithoutPos` mode.

use serde::{Deserialize, Serialize};

use crate::cache::{HeadCacheState, LocalToken, Slot};
use crate::config::{CompressionConfig, PositionMode};
use crate::error::{invalid, Error, Result};
use crate::numerics::{log_sum_exp, scaled_dot, stable_softmax_row, Matrix};
use crate::policy::Policy;
use crate::scoring::{column_sums_with_lse, ScoreState, SCORE_TILE_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeParams {
    pub head_dim: usize,
    pub base: f64,
}

impl RopeParams {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(invalid(format!("rope head_dim must be even and positive, got {head_dim}")));
        }
        if !(base.is_finite() && base > 0.0) {
            return Err(invalid(format!("rope base must be positive, got {base}")));
        }
        Ok(Self { head_dim, base })
    }

    pub fn standard(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, 10_000.0)
    }

    fn inv_freq(&self, pair: usize) -> f64 {
        self.base.powf(-2.0 * pair as f64 / self.head_dim as f64)
    }
}

/// Rotates consecutive element pairs `(2i, 2i+1)` by `position * base^(-2i/d)`.
pub fn apply_rope(v: &[f64], position: usize, params: &RopeParams) -> Result<Vec<f64>> {
    if v.len() != params.head_dim {
        return Err(invalid(format!(
            "vector length {} does not match rope head_dim {}",
            v.len(),
            params.head_dim
        )));
    }
    let mut out = v.to_vec();
    rotate_in_place(&mut out, position, params);
    Ok(out)
}

fn rotate_in_place(v: &mut [f64], position: usize, params: &RopeParams) {
    if position == 0 {
        return;
    }
    let p = position as f64;
    for (i, pair) in v.chunks_exact_mut(2).enumerate() {
        let (sin, cos) = (p * params.inv_freq(i)).sin_cos();
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * cos - y * sin;
        pair[1] = x * sin + y * cos;
    }
}

pub(crate) fn rope_for(config: &CompressionConfig, head_dim: usize) -> Result<Option<RopeParams>> {
    config
        .rope_base
        .map(|base| RopeParams::new(head_dim, base))
        .transpose()
}

fn positioned(v: &[f64], position: usize, rope: Option<&RopeParams>) -> Vec<f64> {
    let mut out = v.to_vec();
    if let Some(r) = rope {
        rotate_in_place(&mut out, position, r);
    }
    out
}

/// Prompt attention outputs, one row per query token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub outputs: Matrix,
    /// Full causal weight matrix, only when requested at prefill.
    pub weights: Option<Matrix>,
}

impl AttentionOutput {
    pub fn weights_available(&self) -> bool {
        self.weights.is_some()
    }
}

/// Dense prompt pass: attention outputs plus the uncompressed score state.
#[derive(Debug, Clone)]
pub struct PromptPass {
    pub output: AttentionOutput,
    pub scores: ScoreState,
}

/// Runs causal attention over a prompt and derives its Global and Local
/// scores. Positions start at 0.
pub fn run_prompt(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    config: &CompressionConfig,
    keep_weights: bool,
) -> Result<PromptPass> {
    let n = q.rows();
    if n == 0 {
        return Err(invalid("prefill needs at least one token"));
    }
    if k.rows() != n || v.rows() != n {
        return Err(invalid(format!(
            "token counts differ: q {n}, k {}, v {}",
            k.rows(),
            v.rows()
        )));
    }
    let d = q.cols();
    if k.cols() != d || v.cols() != d {
        return Err(invalid("q, k and v must share the head dimension"));
    }
    let rope = rope_for(config, d)?;
    let rotate = |m: &Matrix| -> Result<Matrix> {
        let mut out = m.clone();
        if let Some(r) = &rope {
            for i in 0..n {
                rotate_in_place(out.row_mut(i), i, r);
            }
        }
        Ok(out)
    };
    let qr = rotate(q)?;
    let kr = rotate(k)?;

    let mut outputs = Matrix::zeros(n, d);
    let mut weights = keep_weights.then(|| Matrix::zeros(n, n));
    let mut lse = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        logits.clear();
        logits.extend((0..=i).map(|j| scaled_dot(qr.row(i), kr.row(j))));
        let w = stable_softmax_row(&logits)?;
        lse.push(log_sum_exp(&logits));
        let out = outputs.row_mut(i);
        for (j, &wj) in w.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(v.row(j)) {
                *o += wj * x;
            }
        }
        if let Some(m) = weights.as_mut() {
            m.row_mut(i)[..=i].copy_from_slice(&w);
        }
    }

    let window = config.l_win.min(n);
    let (glo, loc) = column_sums_with_lse(&qr, &kr, &lse, n - window, SCORE_TILE_ROWS)?;
    let scores = ScoreState::from_prefill(glo, loc, config.l_win)?;
    Ok(PromptPass {
        output: AttentionOutput { outputs, weights },
        scores,
    })
}

/// Prefill result for one head.
#[derive(Debug, Clone)]
pub struct PrefillResult {
    pub output: AttentionOutput,
    pub cache: HeadCacheState,
    pub scores: ScoreState,
    /// False when the prompt fit the budget (or the local window) and was
    /// stored uncompressed.
    pub compressed: bool,
}

/// Causal prefill followed by exactly one compression by `policy`.
pub fn prefill(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    policy: &Policy,
    config: &CompressionConfig,
) -> Result<PrefillResult> {
    prefill_with(q, k, v, policy, config, false)
}

/// Like [`prefill`], optionally keeping the full prompt weight matrix.
pub fn prefill_with(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    policy: &Policy,
    config: &CompressionConfig,
    keep_weights: bool,
) -> Result<PrefillResult> {
    config.validate()?;
    let pass = run_prompt(q, k, v, config, keep_weights)?;
    let compressed = policy.compress_prefill(k, v, pass.scores, config)?;
    Ok(PrefillResult {
        output: pass.output,
        cache: compressed.cache,
        scores: compressed.scores,
        compressed: compressed.compressed,
    })
}

/// Attention of one query over the expanded cache.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedAttention {
    pub output: Vec<f64>,
    /// Logical position of every expanded entry, in attention order.
    pub positions: Vec<usize>,
    /// Softmax weight of every expanded entry.
    pub weights: Vec<f64>,
    /// Weight mass per stored entry (centers by slot, then locals), aligned
    /// with [`ScoreState`].
    pub entry_weights: Vec<f64>,
}

impl ExpandedAttention {
    /// Logical position receiving the largest weight (earliest on ties).
    pub fn argmax_position(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (&p, &w) in self.positions.iter().zip(&self.weights) {
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((p, w));
            }
        }
        best.map(|(p, _)| p)
    }
}

/// Attends `q` (raw, positioned at the newest cached token) over the
/// look-up-table expansion of `cache` plus its local tokens.
pub fn attend_expanded(
    q: &[f64],
    cache: &HeadCacheState,
    config: &CompressionConfig,
) -> Result<ExpandedAttention> {
    if !cache.is_initialized() {
        return Err(Error::State("cache was never initialized by prefill".into()));
    }
    let d = cache.head_dim();
    if q.len() != d {
        return Err(invalid(format!("query has length {}, head_dim is {d}", q.len())));
    }
    let query_position = cache
        .next_position()
        .checked_sub(1)
        .ok_or_else(|| Error::State("cache holds no tokens".into()))?;
    let rope = rope_for(config, d)?;
    let q_rot = positioned(q, query_position, rope.as_ref());

    let centers = cache.centers();
    let capacity = cache.lut().len() + cache.num_locals();
    let mut logits = Vec::with_capacity(capacity);
    let mut positions = Vec::with_capacity(capacity);
    let mut owners = Vec::with_capacity(capacity);
    for entry in cache.lut() {
        let Slot::Center(s) = entry.slot else { continue };
        let center = centers.get(s).ok_or_else(|| {
            Error::Corruption(format!(
                "look-up-table entry at position {} references missing slot {s}",
                entry.position
            ))
        })?;
        let at = match config.position_mode {
            PositionMode::WithPos => entry.position,
            PositionMode::WithoutPos => center.position,
        };
        let key = positioned(&center.key, at, rope.as_ref());
        logits.push(scaled_dot(&q_rot, &key));
        positions.push(entry.position);
        owners.push(s);
    }
    for (i, t) in cache.locals().enumerate() {
        let key = positioned(&t.key, t.position, rope.as_ref());
        logits.push(scaled_dot(&q_rot, &key));
        positions.push(t.position);
        owners.push(centers.len() + i);
    }
    if logits.is_empty() {
        return Err(Error::State("nothing to attend over".into()));
    }
    let weights = stable_softmax_row(&logits)?;
    let locals: Vec<&LocalToken> = cache.locals().collect();
    let mut output = vec![0.0; d];
    let mut entry_weights = vec![0.0; cache.stored_entries()];
    for (&w, &owner) in weights.iter().zip(&owners) {
        let value = if owner < centers.len() {
            &centers[owner].value
        } else {
            &locals[owner - centers.len()].value
        };
        for (o, &x) in output.iter_mut().zip(value) {
            *o += w * x;
        }
        entry_weights[owner] += w;
    }
    Ok(ExpandedAttention {
        output,
        positions,
        weights,
        entry_weights,
    })
}

/// One autoregressive step: append the token, attend, update scores, then
/// let the policy graduate the oldest local token if the window overflowed.
pub fn decode_step(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    cache: &mut HeadCacheState,
    scores: &mut ScoreState,
    policy: &Policy,
    config: &CompressionConfig,
) -> Result<ExpandedAttention> {
    if !cache.is_initialized() {
        return Err(Error::State("decode before prefill".into()));
    }
    let d = cache.head_dim();
    if k.len() != d || v.len() != d {
        return Err(invalid("decode key/value length does not match head_dim"));
    }
    if scores.len() != cache.stored_entries() {
        return Err(Error::State(format!(
            "score state has {} entries, cache stores {}",
            scores.len(),
            cache.stored_entries()
        )));
    }
    let position = cache.next_position;
    cache.locals.push_back(LocalToken {
        key: k.to_vec(),
        value: v.to_vec(),
        position,
    });
    cache.next_position += 1;
    scores.push_token();

    let attention = attend_expanded(q, cache, config)?;
    scores.update_decode(&attention.entry_weights)?;
    if cache.num_locals() > config.l_win {
        policy.graduate(cache, scores, config)?;
    }
    Ok(attention)
}
