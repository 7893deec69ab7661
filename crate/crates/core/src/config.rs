use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How merged entries are positioned when the cache is expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// Every look-up-table entry is re-rotated at its own logical position.
    WithPos,
    /// All entries of a center expand at the center's position.
    WithoutPos,
}

/// How an eviction decided at the merge stage is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionMode {
    /// Evicted tokens are merged into the reserved zero class and stay in the
    /// look-up-table as dead entries.
    ZeroClass,
    /// Evicted tokens are dropped from the look-up-table.
    Explicit,
}

/// Per-head compression settings shared by every policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Stored entries per head after compression: class centers plus locals.
    pub n_budget: usize,
    /// Local window; the most recent `l_win` tokens are always kept exactly.
    pub l_win: usize,
    /// Merge threshold on key-value redundancy.
    pub tau: f64,
    /// Merge magnification factor, `(n_budget + n_tbm) / n_budget`.
    pub gamma: f64,
    /// Score-mass fraction used by the sparsity diagnostic.
    pub zeta: f64,
    /// Odd mean-pooling width applied to the Global-Local score.
    pub kernel_size: usize,
    pub position_mode: PositionMode,
    pub eviction_mode: EvictionMode,
    /// Rotary base; `None` disables positional encoding entirely.
    pub rope_base: Option<f64>,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            n_budget: 256,
            l_win: 32,
            tau: 0.6,
            gamma: 4.0,
            zeta: 0.95,
            kernel_size: 7,
            position_mode: PositionMode::WithPos,
            eviction_mode: EvictionMode::ZeroClass,
            rope_base: Some(10_000.0),
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_win == 0 {
            return Err(Error::Config("l_win must be at least 1".into()));
        }
        if self.n_budget <= self.l_win {
            return Err(Error::Config(format!(
                "n_budget ({}) must exceed l_win ({})",
                self.n_budget, self.l_win
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !self.gamma.is_finite() || self.gamma < 1.0 {
            return Err(Error::Config(format!("gamma must be finite and >= 1, got {}", self.gamma)));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::Config(format!("zeta must lie in (0, 1], got {}", self.zeta)));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if let Some(base) = self.rope_base {
            if !(base.is_finite() && base > 0.0) {
                return Err(Error::Config(format!("rope base must be positive, got {base}")));
            }
        }
        Ok(())
    }

    /// Class-center count, `n_budget - l_win`.
    pub fn n_imp(&self) -> usize {
        self.n_budget - self.l_win
    }

    /// To-be-merged count, `floor((gamma - 1) * n_budget)`.
    pub fn n_tbm(&self) -> usize {
        ((self.gamma - 1.0) * self.n_budget as f64 + 1e-9).floor() as usize
    }

    /// Decode-time look-up-table capacity, `n_budget + n_tbm` (`gamma *
    /// n_budget` up to flooring). Prefill fills `n_imp + n_tbm` of it.
    pub fn lut_capacity(&self) -> usize {
        self.n_budget + self.n_tbm()
    }
}
