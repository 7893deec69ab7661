//! Evict-then-Merge compression.
//!
//! Prefill: rank tokens by the pooled Global-Local score, keep the local
//! window, take the top `n_imp` as class centers and the next `n_tbm` as
//! to-be-merged (TBM) tokens, and drop the rest outright. Each TBM token
//! merges into its most redundant center when that redundancy reaches `tau`;
//! otherwise it is merged into the zero class, which is eviction.
//!
//! Decode: the token leaving the local window becomes a center, the least
//! important center becomes the step's TBM token, and the same merge-or-evict
//! rule applies.

use serde::{Deserialize, Serialize};

use crate::analysis::{unit_redundancy, unit_rows};
use crate::cache::{CenterEntry, HeadCacheState, LocalToken, LutEntry, Slot};
use crate::config::{CompressionConfig, EvictionMode};
use crate::error::{invalid, Result};
use crate::numerics::{mean_pool_1d, normalize_in_place, Matrix};
use crate::policy::{keep_layout, largest_odd_at_most, Compressed};
use crate::scoring::ScoreState;

/// Token index sets produced by ranking, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPartition {
    pub irrelevant: Vec<usize>,
    pub tbm: Vec<usize>,
    pub important: Vec<usize>,
    pub local: Vec<usize>,
}

/// Indices of `score[..candidates]` in descending score order; ties go to the
/// lower index.
pub(crate) fn ranked(score: &[f64], candidates: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates).collect();
    idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    idx
}

pub fn partition_tokens(pooled_score: &[f64], config: &CompressionConfig) -> Result<TokenPartition> {
    let n = pooled_score.len();
    if n < config.l_win + 1 {
        return Err(invalid(format!(
            "partition needs more than l_win = {} tokens, got {n}",
            config.l_win
        )));
    }
    let m = n - config.l_win;
    let order = ranked(pooled_score, m);
    let n_imp = config.n_imp().min(m);
    let n_tbm = config.n_tbm().min(m - n_imp);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(TokenPartition {
        important: sorted(&order[..n_imp]),
        tbm: sorted(&order[n_imp..n_imp + n_tbm]),
        irrelevant: sorted(&order[n_imp + n_tbm..]),
        local: (m..n).collect(),
    })
}

/// Argmax center per TBM row when it reaches `tau`, the zero class
/// otherwise. `tau <= 0` merges every row.
pub fn assign_merge_destinations(redundancy: &Matrix, tau: f64) -> Vec<Slot> {
    redundancy
        .iter_rows()
        .map(|row| {
            let (best, max) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
            if tau <= 0.0 || max >= tau {
                Slot::Center(best)
            } else {
                Slot::Zero
            }
        })
        .collect()
}

/// A to-be-merged token with its merge weight and score accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct TbmToken {
    pub position: usize,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// Importance used as the merge weight.
    pub weight: f64,
    pub s_glo: f64,
    pub s_loc_past: f64,
    pub s_loc_cur: f64,
}

/// Merges TBM tokens into their destination centers.
///
/// Per center, members (the center plus its assigned tokens) are weighted
/// by importance. The unit key becomes the renormalized weighted mean of the
/// members' unit keys, the center keeps its own norm and position, and the
/// value becomes the weighted mean of raw values. Score accumulators absorb
/// the members' mass. Every TBM token gains a look-up-table entry, pointing
/// at the zero class when it was evicted (or none in explicit mode).
pub fn weighted_merge(
    cache: &mut HeadCacheState,
    scores: &mut ScoreState,
    center_weights: &[f64],
    tbm: &[TbmToken],
    destinations: &[Slot],
    mode: EvictionMode,
) -> Result<()> {
    if tbm.len() != destinations.len() {
        return Err(invalid("one destination per TBM token is required"));
    }
    if center_weights.len() != cache.centers.len() {
        return Err(invalid("one weight per center is required"));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); cache.centers.len()];
    for (t, dest) in destinations.iter().enumerate() {
        if let Slot::Center(c) = *dest {
            groups
                .get_mut(c)
                .ok_or_else(|| invalid(format!("destination slot {c} does not exist")))?
                .push(t);
        }
    }
    for (c, members) in groups.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut weights = Vec::with_capacity(members.len() + 1);
        weights.push(center_weights[c]);
        weights.extend(members.iter().map(|&t| tbm[t].weight));
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            let u = 1.0 / weights.len() as f64;
            weights.iter_mut().for_each(|w| *w = u);
        }

        let center = &cache.centers[c];
        let d = center.key.len();
        let mut unit = vec![0.0; d];
        let mut value = vec![0.0; d];
        let mut accumulate = |w: f64, key_unit: &[f64], val: &[f64]| {
            for ((u, v), (ku, x)) in unit.iter_mut().zip(value.iter_mut()).zip(key_unit.iter().zip(val)) {
                *u += w * ku;
                *v += w * x;
            }
        };
        accumulate(weights[0], &center.unit_key(), &center.value);
        for (&t, &w) in members.iter().zip(&weights[1..]) {
            let mut ku = tbm[t].key.clone();
            normalize_in_place(&mut ku);
            accumulate(w, &ku, &tbm[t].value);
        }
        let center = &mut cache.centers[c];
        if normalize_in_place(&mut unit) > 0.0 {
            center.key = unit.iter().map(|u| u * center.key_norm).collect();
        }
        center.value = value;
        for &t in members {
            scores.s_glo[c] += tbm[t].s_glo;
            scores.s_loc_past[c] += tbm[t].s_loc_past;
            scores.s_loc_cur[c] += tbm[t].s_loc_cur;
        }
    }
    for (token, dest) in tbm.iter().zip(destinations) {
        if *dest == Slot::Zero && mode == EvictionMode::Explicit {
            continue;
        }
        cache.insert_lut(LutEntry {
            position: token.position,
            slot: *dest,
        });
    }
    Ok(())
}

/// Cross redundancy between two token sets given as row indices into the
/// raw key/value blocks.
fn cross_redundancy(
    unit_keys: &[Vec<f64>],
    unit_values: &[Vec<f64>],
    rows: &[usize],
    cols: &[usize],
) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for &i in rows {
        for &j in cols {
            data.push(unit_redundancy(&unit_keys[i], &unit_values[i], &unit_keys[j], &unit_values[j]));
        }
    }
    if cols.is_empty() {
        return Err(invalid("no class centers to merge into"));
    }
    Matrix::new(rows.len(), cols.len(), data)
}

/// Prefill compression: pooled ranking, first-level eviction of irrelevant
/// tokens, then unified merge/evict of TBM tokens into class centers.
pub fn compress_prefill(
    k: &Matrix,
    v: &Matrix,
    scores: ScoreState,
    config: &CompressionConfig,
) -> Result<Compressed> {
    let n = k.rows();
    if v.rows() != n || scores.len() != n {
        return Err(invalid("keys, values and scores must cover the same tokens"));
    }
    if n <= config.n_budget {
        let keep: Vec<usize> = (0..n.saturating_sub(config.l_win)).collect();
        return keep_layout(k, v, &scores, &keep, config.l_win, false);
    }

    let combined = scores.combined()?;
    let pooled = mean_pool_1d(&combined, largest_odd_at_most(config.kernel_size, n))?;
    let partition = partition_tokens(&pooled, config)?;

    let Compressed { mut cache, scores: mut kept_scores, .. } =
        keep_layout(k, v, &scores, &partition.important, config.l_win, true)?;

    if !partition.tbm.is_empty() {
        let (uk, _) = unit_rows(k);
        let (uv, _) = unit_rows(v);
        let r = cross_redundancy(&uk, &uv, &partition.tbm, &partition.important)?;
        let destinations = assign_merge_destinations(&r, config.tau);
        let center_weights: Vec<f64> = partition.important.iter().map(|&i| combined[i]).collect();
        let tbm: Vec<TbmToken> = partition
            .tbm
            .iter()
            .map(|&i| TbmToken {
                position: i,
                key: k.row(i).to_vec(),
                value: v.row(i).to_vec(),
                weight: combined[i],
                s_glo: scores.s_glo[i],
                s_loc_past: scores.s_loc_past[i],
                s_loc_cur: scores.s_loc_cur[i],
            })
            .collect();
        weighted_merge(
            &mut cache,
            &mut kept_scores,
            &center_weights,
            &tbm,
            &destinations,
            config.eviction_mode,
        )?;
    }
    Ok(Compressed {
        cache,
        scores: kept_scores,
        compressed: true,
    })
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Decode-time update once the oldest local token leaves the window.
///
/// The graduating token joins the centers; while the center count is below
/// `n_imp` that is all. Otherwise the least important center (unpooled
/// Global-Local score over the stored entries) is merged into its most
/// redundant peer if that reaches `tau`, or evicted to the zero class. The
/// look-up-table is then trimmed to capacity, dropping the oldest zero-class
/// entry first and the oldest entry overall only if no dead entry remains.
pub fn decode_update(
    cache: &mut HeadCacheState,
    scores: &mut ScoreState,
    config: &CompressionConfig,
) -> Result<()> {
    let Some(graduate) = cache.locals.pop_front() else {
        return Ok(());
    };
    let new_slot = push_center(cache, graduate);
    if cache.centers.len() <= config.n_imp() {
        return Ok(());
    }

    let importance = scores.combined()?;
    let n_centers = cache.centers.len();
    let tbm = argmin_first(&importance[..n_centers]);

    let units: Vec<(Vec<f64>, Vec<f64>)> = cache
        .centers
        .iter()
        .map(|c| {
            let mut val = c.value.clone();
            normalize_in_place(&mut val);
            (c.unit_key(), val)
        })
        .collect();
    let mut dest = None;
    if config.n_tbm() > 0 {
        let mut best = f64::NEG_INFINITY;
        for o in (0..n_centers).filter(|&o| o != tbm) {
            let r = unit_redundancy(&units[tbm].0, &units[tbm].1, &units[o].0, &units[o].1);
            if r > best {
                best = r;
                dest = Some(o);
            }
        }
        if !(config.tau <= 0.0 || best >= config.tau) {
            dest = None;
        }
    }

    match dest {
        Some(c) => {
            merge_center_into(cache, &importance, tbm, c);
            scores.absorb(c, tbm);
            for e in cache.lut.iter_mut().filter(|e| e.slot == Slot::Center(tbm)) {
                e.slot = Slot::Center(c);
            }
        }
        None => retire_slot_entries(cache, tbm, config.eviction_mode),
    }
    remove_center_slot(cache, scores, tbm);
    debug_assert_eq!(new_slot + 1, n_centers);
    trim_lut(cache, config.lut_capacity());
    Ok(())
}

/// Pushes a graduating local token as a new center with its own LUT entry.
/// Its score entry already sits at index `centers.len()`.
pub(crate) fn push_center(cache: &mut HeadCacheState, token: LocalToken) -> usize {
    let slot = cache.centers.len();
    cache
        .centers
        .push(CenterEntry::from_token(&token.key, &token.value, token.position));
    cache.insert_lut(LutEntry {
        position: token.position,
        slot: Slot::Center(slot),
    });
    slot
}

fn merge_center_into(cache: &mut HeadCacheState, importance: &[f64], from: usize, into: usize) {
    let (mut wi, mut wf) = (importance[into], importance[from]);
    let total = wi + wf;
    if total > 0.0 {
        wi /= total;
        wf /= total;
    } else {
        wi = 0.5;
        wf = 0.5;
    }
    let src_unit = cache.centers[from].unit_key();
    let src_value = cache.centers[from].value.clone();
    let dst = &mut cache.centers[into];
    let mut unit: Vec<f64> = dst
        .unit_key()
        .iter()
        .zip(&src_unit)
        .map(|(a, b)| wi * a + wf * b)
        .collect();
    if normalize_in_place(&mut unit) > 0.0 {
        dst.key = unit.iter().map(|u| u * dst.key_norm).collect();
    }
    for (v, s) in dst.value.iter_mut().zip(&src_value) {
        *v = wi * *v + wf * s;
    }
}

/// Remaps (zero class) or drops (explicit) every LUT entry of `slot`.
pub(crate) fn retire_slot_entries(cache: &mut HeadCacheState, slot: usize, mode: EvictionMode) {
    match mode {
        EvictionMode::ZeroClass => {
            for e in cache.lut.iter_mut().filter(|e| e.slot == Slot::Center(slot)) {
                e.slot = Slot::Zero;
            }
        }
        EvictionMode::Explicit => cache.lut.retain(|e| e.slot != Slot::Center(slot)),
    }
}

/// Frees `slot` by moving the last center into it. The slot must no longer
/// be referenced by the LUT.
pub(crate) fn remove_center_slot(cache: &mut HeadCacheState, scores: &mut ScoreState, slot: usize) {
    let last = cache.centers.len() - 1;
    cache.centers.swap_remove(slot);
    if slot != last {
        for e in cache.lut.iter_mut().filter(|e| e.slot == Slot::Center(last)) {
            e.slot = Slot::Center(slot);
        }
    }
    scores.replace_and_remove(slot, last);
}

fn trim_lut(cache: &mut HeadCacheState, capacity: usize) {
    while cache.lut.len() > capacity {
        match cache.lut.iter().position(|e| e.slot == Slot::Zero) {
            Some(i) => cache.lut.remove(i),
            None => cache.lut.remove(0),
        };
    }
}
