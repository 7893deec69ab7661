//! Per-head compressed KV store.
//!
//! A cache holds three things:
//! * class centers, addressed by slot, each with a key, the key's norm, a
//!   value and the logical position of the token that founded it;
//! * the local window of exact recent tokens;
//! * a position look-up-table mapping older logical positions onto center
//!   slots or onto the zero class.
//!
//! Center keys are kept as `norm * unit_direction`. An unmerged center
//! therefore holds its raw key bit-exactly, while merges rewrite only the
//! direction and leave the norm scalar untouched.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::l2_norm;
use crate::scoring::ScoreState;

/// Bytes per stored real.
pub const ELEMENT_BYTES: usize = std::mem::size_of::<f64>();
/// Bytes per look-up-table entry: a `u32` position plus a `u32` slot id.
pub const LUT_ENTRY_BYTES: usize = 8;
/// Per-entry scalars: key norm, `s_glo`, `s_loc_past`, `s_loc_cur`.
pub const SCALARS_PER_ENTRY: usize = 4;

/// Destination of a look-up-table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Center(usize),
    /// The zero class: the token was evicted.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LutEntry {
    pub position: usize,
    pub slot: Slot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterEntry {
    /// Effective raw (pre-RoPE) key, `key_norm * unit_key`.
    pub key: Vec<f64>,
    pub key_norm: f64,
    pub value: Vec<f64>,
    /// Logical position of the token that became this center.
    pub position: usize,
}

impl CenterEntry {
    pub fn from_token(key: &[f64], value: &[f64], position: usize) -> Self {
        Self {
            key: key.to_vec(),
            key_norm: l2_norm(key),
            value: value.to_vec(),
            position,
        }
    }

    /// Unit-norm key direction; zero for a zero key.
    pub fn unit_key(&self) -> Vec<f64> {
        if self.key_norm > 0.0 {
            self.key.iter().map(|x| x / self.key_norm).collect()
        } else {
            vec![0.0; self.key.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalToken {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadCacheState {
    head_dim: usize,
    initialized: bool,
    pub(crate) centers: Vec<CenterEntry>,
    pub(crate) locals: VecDeque<LocalToken>,
    pub(crate) lut: Vec<LutEntry>,
    pub(crate) next_position: usize,
}

impl HeadCacheState {
    /// An uninitialized cache; decoding into it is a state error.
    pub fn uninitialized(head_dim: usize) -> Self {
        Self {
            head_dim,
            ..Default::default()
        }
    }

    /// Assembles a cache from parts without checking invariants. Pair with
    /// [`HeadCacheState::validate`].
    pub fn from_parts(
        head_dim: usize,
        centers: Vec<CenterEntry>,
        locals: Vec<LocalToken>,
        lut: Vec<LutEntry>,
        next_position: usize,
    ) -> Self {
        Self {
            head_dim,
            initialized: true,
            centers,
            locals: locals.into(),
            lut,
            next_position,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn centers(&self) -> &[CenterEntry] {
        &self.centers
    }

    pub fn locals(&self) -> impl ExactSizeIterator<Item = &LocalToken> {
        self.locals.iter()
    }

    pub fn num_locals(&self) -> usize {
        self.locals.len()
    }

    pub fn lut(&self) -> &[LutEntry] {
        &self.lut
    }

    /// Logical position the next appended token will receive.
    pub fn next_position(&self) -> usize {
        self.next_position
    }

    /// Centers plus locals.
    pub fn stored_entries(&self) -> usize {
        self.centers.len() + self.locals.len()
    }

    /// Logical tokens visible to attention: live LUT entries plus locals.
    pub fn expanded_len(&self) -> usize {
        self.live_lut_entries() + self.locals.len()
    }

    pub fn live_lut_entries(&self) -> usize {
        self.lut.iter().filter(|e| e.slot != Slot::Zero).count()
    }

    /// Whether `position` is still represented by a live entry.
    pub fn covers_position(&self, position: usize) -> bool {
        self.locals.iter().any(|t| t.position == position)
            || self
                .lut
                .iter()
                .any(|e| e.position == position && e.slot != Slot::Zero)
    }

    pub(crate) fn mark_initialized(&mut self) {
        self.initialized = true;
    }

    /// Checks referential integrity: slot references, position ordering,
    /// key norms.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.lut.iter().enumerate() {
            if let Slot::Center(s) = e.slot {
                if s >= self.centers.len() {
                    return Err(Error::Corruption(format!(
                        "look-up-table entry {i} references slot {s} but only {} centers exist",
                        self.centers.len()
                    )));
                }
            }
            if i > 0 && self.lut[i - 1].position >= e.position {
                return Err(Error::Corruption(format!(
                    "look-up-table positions not strictly increasing at entry {i}"
                )));
            }
        }
        for (s, c) in self.centers.iter().enumerate() {
            if c.key.len() != self.head_dim || c.value.len() != self.head_dim {
                return Err(Error::Corruption(format!("center {s} has the wrong dimension")));
            }
            let n = l2_norm(&c.key);
            if (n - c.key_norm).abs() > 1e-9 * c.key_norm.max(1.0) {
                return Err(Error::Corruption(format!(
                    "center {s} key norm {n} disagrees with stored norm {}",
                    c.key_norm
                )));
            }
        }
        let mut prev = None;
        for t in &self.locals {
            if prev.is_some_and(|p| p >= t.position) {
                return Err(Error::Corruption("local positions not increasing".into()));
            }
            prev = Some(t.position);
        }
        Ok(())
    }

    /// Inserts a LUT entry keeping positions sorted.
    pub(crate) fn insert_lut(&mut self, entry: LutEntry) {
        let at = self.lut.partition_point(|e| e.position < entry.position);
        self.lut.insert(at, entry);
    }

    /// Byte footprint of the stored state.
    pub fn memory(&self) -> MemoryFootprint {
        MemoryFootprint::of(self.head_dim, self.stored_entries(), self.lut.len())
    }
}

/// Stored-state byte accounting: K and V rows, four scalars per entry (key
/// norm and the three score accumulators) and the look-up-table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub stored_entries: usize,
    pub lut_entries: usize,
    pub kv_bytes: usize,
    pub scalar_bytes: usize,
    pub lut_bytes: usize,
    pub total_bytes: usize,
}

impl MemoryFootprint {
    pub fn of(head_dim: usize, stored_entries: usize, lut_entries: usize) -> Self {
        let kv_bytes = 2 * stored_entries * head_dim * ELEMENT_BYTES;
        let scalar_bytes = SCALARS_PER_ENTRY * stored_entries * ELEMENT_BYTES;
        let lut_bytes = lut_entries * LUT_ENTRY_BYTES;
        Self {
            stored_entries,
            lut_entries,
            kv_bytes,
            scalar_bytes,
            lut_bytes,
            total_bytes: kv_bytes + scalar_bytes + lut_bytes,
        }
    }
}

/// JSON diagnostic dump of one head's cache and score accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheDump {
    pub head_dim: usize,
    pub next_position: usize,
    pub centers: Vec<CenterDump>,
    pub locals: Vec<LocalToken>,
    pub lut: Vec<LutEntry>,
    pub scores: ScoreState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterDump {
    pub slot: usize,
    pub position: usize,
    pub key_normalized: Vec<f64>,
    pub key_norm: f64,
    pub value: Vec<f64>,
}

impl CacheDump {
    pub fn capture(cache: &HeadCacheState, scores: &ScoreState) -> Self {
        Self {
            head_dim: cache.head_dim,
            next_position: cache.next_position,
            centers: cache
                .centers
                .iter()
                .enumerate()
                .map(|(slot, c)| CenterDump {
                    slot,
                    position: c.position,
                    key_normalized: c.unit_key(),
                    key_norm: c.key_norm,
                    value: c.value.clone(),
                })
                .collect(),
            locals: cache.locals.iter().cloned().collect(),
            lut: cache.lut.clone(),
            scores: scores.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
