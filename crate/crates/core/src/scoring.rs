//! Global-Local token importance.
//!
//! Prefill scores are column sums of the causal attention matrix. They are
//! computed in two streaming passes: one per-row log-sum-exp pass, then a
//! tiled pass that re-derives each attention weight as `exp(logit - lse)` and
//! folds it into the column accumulators. Neither pass holds more than one
//! tile of rows, so memory is linear in N.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{mean_pool_1d, scaled_dot, Matrix};

/// Query rows processed per tile in the column-sum pass.
pub const SCORE_TILE_ROWS: usize = 128;

/// Key columns folded per step of the online log-sum-exp pass.
const LSE_KEY_TILE: usize = 128;

/// Per-head score accumulators, aligned with the stored cache entries.
///
/// Right after prefill there is one entry per prompt token. Once a policy
/// compresses the cache the vectors are compacted in lockstep with it:
/// class centers first (in slot order), then local tokens (oldest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreState {
    pub s_glo: Vec<f64>,
    pub s_loc_past: Vec<f64>,
    pub s_loc_cur: Vec<f64>,
    pub window_fill: usize,
    pub l_win: usize,
}

impl ScoreState {
    /// State after prefill: the prompt's local scores become the past window.
    pub fn from_prefill(s_glo: Vec<f64>, s_loc: Vec<f64>, l_win: usize) -> Result<Self> {
        if s_glo.len() != s_loc.len() {
            return Err(invalid("global and local score lengths differ"));
        }
        if l_win == 0 {
            return Err(invalid("l_win must be positive"));
        }
        let n = s_glo.len();
        Ok(Self {
            s_glo,
            s_loc_past: s_loc,
            s_loc_cur: vec![0.0; n],
            window_fill: 0,
            l_win,
        })
    }

    pub fn len(&self) -> usize {
        self.s_glo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_glo.is_empty()
    }

    /// Effective local score, `s_loc_past + s_loc_cur`.
    pub fn local(&self) -> Vec<f64> {
        self.s_loc_past
            .iter()
            .zip(&self.s_loc_cur)
            .map(|(p, c)| p + c)
            .collect()
    }

    /// Number of query rows currently contributing to the local score.
    pub fn local_window_span(&self) -> usize {
        self.l_win + self.window_fill
    }

    /// Unpooled Global-Local score over the current entries.
    pub fn combined(&self) -> Result<Vec<f64>> {
        combine_glo_loc(&self.s_glo, &self.local())
    }

    /// Appends a zeroed accumulator for a newly cached token.
    pub fn push_token(&mut self) {
        self.s_glo.push(0.0);
        self.s_loc_past.push(0.0);
        self.s_loc_cur.push(0.0);
    }

    /// Folds one decode attention row into the accumulators and rotates the
    /// local window once it has seen `l_win` rows.
    pub fn update_decode(&mut self, attn_row: &[f64]) -> Result<()> {
        if attn_row.len() != self.len() {
            return Err(invalid(format!(
                "attention row has {} entries, score state has {}",
                attn_row.len(),
                self.len()
            )));
        }
        for ((g, c), &a) in self.s_glo.iter_mut().zip(&mut self.s_loc_cur).zip(attn_row) {
            *g += a;
            *c += a;
        }
        self.window_fill += 1;
        if self.window_fill == self.l_win {
            std::mem::swap(&mut self.s_loc_past, &mut self.s_loc_cur);
            self.s_loc_cur.iter_mut().for_each(|c| *c = 0.0);
            self.window_fill = 0;
        }
        Ok(())
    }

    /// Adds the accumulators of entry `src` into entry `dst`.
    pub(crate) fn absorb(&mut self, dst: usize, src: usize) {
        self.s_glo[dst] += self.s_glo[src];
        self.s_loc_past[dst] += self.s_loc_past[src];
        self.s_loc_cur[dst] += self.s_loc_cur[src];
    }

    /// Moves entry `src` over entry `dst`, then deletes position `src`.
    pub(crate) fn replace_and_remove(&mut self, dst: usize, src: usize) {
        for v in [&mut self.s_glo, &mut self.s_loc_past, &mut self.s_loc_cur] {
            v[dst] = v[src];
            v.remove(src);
        }
    }

    /// Keeps only the listed entries, in the listed order.
    pub(crate) fn select(&self, indices: &[usize]) -> ScoreState {
        let pick = |v: &Vec<f64>| indices.iter().map(|&i| v[i]).collect();
        ScoreState {
            s_glo: pick(&self.s_glo),
            s_loc_past: pick(&self.s_loc_past),
            s_loc_cur: pick(&self.s_loc_cur),
            window_fill: self.window_fill,
            l_win: self.l_win,
        }
    }
}

fn check_qk(q: &Matrix, k: &Matrix) -> Result<()> {
    if q.rows() != k.rows() || q.cols() != k.cols() {
        return Err(invalid(format!(
            "query block {}x{} and key block {}x{} differ in shape",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols()
        )));
    }
    if q.rows() == 0 {
        return Err(invalid("score computation needs at least one token"));
    }
    Ok(())
}

/// Per-row log-sum-exp of causal logits, computed with an online max/sum
/// over key tiles.
pub fn causal_row_lse(q: &Matrix, k: &Matrix) -> Result<Vec<f64>> {
    check_qk(q, k)?;
    Ok((0..q.rows())
        .map(|i| {
            let qi = q.row(i);
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            let mut start = 0;
            while start <= i {
                let end = (start + LSE_KEY_TILE).min(i + 1);
                let mut tile_max = f64::NEG_INFINITY;
                let mut logits = [0.0f64; LSE_KEY_TILE];
                for j in start..end {
                    let l = scaled_dot(qi, k.row(j));
                    logits[j - start] = l;
                    tile_max = tile_max.max(l);
                }
                let new_max = max.max(tile_max);
                sum *= (max - new_max).exp();
                for &l in &logits[..end - start] {
                    sum += (l - new_max).exp();
                }
                max = new_max;
                start = end;
            }
            max + sum.ln()
        })
        .collect())
}

/// Column sums of the causal attention matrix given each row's
/// log-sum-exp. Returns `(global, local)` where `local` only accumulates rows
/// with index `>= local_from`.
pub fn column_sums_with_lse(
    q: &Matrix,
    k: &Matrix,
    lse: &[f64],
    local_from: usize,
    tile_rows: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_qk(q, k)?;
    if lse.len() != q.rows() {
        return Err(invalid("log-sum-exp length must equal the row count"));
    }
    if tile_rows == 0 {
        return Err(invalid("tile size must be positive"));
    }
    let n = q.rows();
    let mut glo = vec![0.0; n];
    let mut loc = vec![0.0; n];
    let mut tile_start = 0;
    while tile_start < n {
        let tile_end = (tile_start + tile_rows).min(n);
        for i in tile_start..tile_end {
            let qi = q.row(i);
            let in_window = i >= local_from;
            for j in 0..=i {
                let p = (scaled_dot(qi, k.row(j)) - lse[i]).exp();
                glo[j] += p;
                if in_window {
                    loc[j] += p;
                }
            }
        }
        tile_start = tile_end;
    }
    Ok((glo, loc))
}

/// Global and local prefill scores from one streaming pass.
pub fn prefill_scores(q: &Matrix, k: &Matrix, l_win: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_qk(q, k)?;
    if l_win == 0 || l_win > q.rows() {
        return Err(invalid(format!(
            "l_win {l_win} must lie in [1, {}]",
            q.rows()
        )));
    }
    let lse = causal_row_lse(q, k)?;
    column_sums_with_lse(q, k, &lse, q.rows() - l_win, SCORE_TILE_ROWS)
}

/// Accumulated attention each token receives from every query row.
pub fn global_score_prefill(q: &Matrix, k: &Matrix) -> Result<Vec<f64>> {
    let lse = causal_row_lse(q, k)?;
    let (glo, _) = column_sums_with_lse(q, k, &lse, q.rows(), SCORE_TILE_ROWS)?;
    Ok(glo)
}

/// Accumulated attention each token receives from the last `l_win` rows.
pub fn local_score_prefill(q: &Matrix, k: &Matrix, l_win: usize) -> Result<Vec<f64>> {
    prefill_scores(q, k, l_win).map(|(_, loc)| loc)
}

/// Mean-aligns the global score to the local score's magnitude and takes the
/// element-wise max.
pub fn combine_glo_loc(s_glo: &[f64], s_loc: &[f64]) -> Result<Vec<f64>> {
    if s_glo.len() != s_loc.len() {
        return Err(invalid(format!(
            "global ({}) and local ({}) scores differ in length",
            s_glo.len(),
            s_loc.len()
        )));
    }
    let n = s_glo.len() as f64;
    let glo_mean = s_glo.iter().sum::<f64>() / n;
    if glo_mean.is_nan() || glo_mean <= 0.0 {
        return Err(Error::Degenerate(
            "global score has zero mass; cannot mean-align".into(),
        ));
    }
    let loc_mean = s_loc.iter().sum::<f64>() / n;
    let factor = loc_mean / glo_mean;
    Ok(s_glo
        .iter()
        .zip(s_loc)
        .map(|(&g, &l)| (g * factor).max(l))
        .collect())
}

/// Pooled Global-Local score used to rank tokens for partitioning.
pub fn effective_score(state: &ScoreState, kernel_size: usize) -> Result<Vec<f64>> {
    let combined = state.combined()?;
    mean_pool_1d(&combined, kernel_size)
}
