//! Head-level sparsity and redundancy diagnostics over raw (pre-RoPE) tokens.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, normalize_in_place, Matrix};

/// Pairwise key-value redundancy, `cos(k_i, k_j) * cos(v_i, v_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyMatrix {
    pub values: Matrix,
    /// Tokens whose key or value had zero norm; their similarities are 0.
    pub zero_norm_tokens: Vec<usize>,
}

impl RedundancyMatrix {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

/// Unit-normalized copies of each row plus a flag for rows that were zero.
pub(crate) fn unit_rows(m: &Matrix) -> (Vec<Vec<f64>>, Vec<bool>) {
    m.iter_rows()
        .map(|r| {
            let mut u = r.to_vec();
            let n = normalize_in_place(&mut u);
            (u, n == 0.0)
        })
        .unzip()
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Redundancy between two tokens given their unit keys and values. Zero
/// vectors (all-zero units) give 0.
pub(crate) fn unit_redundancy(ka: &[f64], va: &[f64], kb: &[f64], vb: &[f64]) -> f64 {
    clamp_unit(dot(ka, kb)) * clamp_unit(dot(va, vb))
}

pub fn redundancy_matrix(k_raw: &Matrix, v_raw: &Matrix) -> Result<RedundancyMatrix> {
    if k_raw.rows() != v_raw.rows() {
        return Err(invalid(format!(
            "key block has {} tokens, value block has {}",
            k_raw.rows(),
            v_raw.rows()
        )));
    }
    let n = k_raw.rows();
    let (ku, kz) = unit_rows(k_raw);
    let (vu, vz) = unit_rows(v_raw);
    let zero_norm_tokens: Vec<usize> = (0..n).filter(|&i| kz[i] || vz[i]).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let r = if kz[i] || vz[i] || kz[j] || vz[j] {
                0.0
            } else if i == j {
                1.0
            } else {
                unit_redundancy(&ku[i], &vu[i], &ku[j], &vu[j])
            };
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    let values = if n == 0 {
        Matrix::zeros(0, 1)
    } else {
        Matrix::new(n, n, values)?
    };
    Ok(RedundancyMatrix {
        values,
        zero_norm_tokens,
    })
}

/// Fraction of tokens not needed to reach `zeta` of the total score mass.
///
/// The score is normalized to unit mass and sorted descending before the
/// smallest sufficient prefix is located.
pub fn sparsity_rate(score: &[f64], zeta: f64) -> Result<f64> {
    if score.is_empty() {
        return Err(invalid("sparsity rate of an empty score"));
    }
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(invalid(format!("zeta must lie in (0, 1], got {zeta}")));
    }
    if score.iter().any(|&s| !s.is_finite() || s < 0.0) {
        return Err(invalid("scores must be finite and nonnegative"));
    }
    let total: f64 = score.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("score has zero total mass".into()));
    }
    let mut sorted: Vec<f64> = score.iter().map(|s| s / total).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let mut acc = 0.0;
    let mut needed = n;
    for (i, s) in sorted.iter().enumerate() {
        acc += s;
        // Slack absorbs the rounding of the normalized prefix sum so that
        // e.g. 95 of 100 uniform tokens reach 0.95.
        if acc >= zeta - 1e-12 {
            needed = i + 1;
            break;
        }
    }
    Ok(1.0 - needed as f64 / n as f64)
}

/// Fraction of tokens whose best predecessor redundancy reaches `tau`.
/// The first token has no predecessor and never counts.
pub fn redundancy_rate(r: &RedundancyMatrix, tau: f64) -> Result<f64> {
    let n = r.len();
    if n == 0 {
        return Err(invalid("redundancy rate of an empty matrix"));
    }
    let redundant = (1..n)
        .filter(|&k| {
            (0..k)
                .map(|j| r.get(k, j))
                .fold(f64::NEG_INFINITY, f64::max)
                >= tau
        })
        .count();
    Ok(redundant as f64 / n as f64)
}

/// Same value as `redundancy_rate(&redundancy_matrix(k, v)?, tau)` without
/// materializing the matrix; stops scanning predecessors at the first hit.
pub fn redundancy_rate_of(k_raw: &Matrix, v_raw: &Matrix, tau: f64) -> Result<f64> {
    let n = k_raw.rows();
    if n != v_raw.rows() {
        return Err(invalid("key and value blocks cover different tokens"));
    }
    if n == 0 {
        return Err(invalid("redundancy rate of an empty block"));
    }
    let (ku, kz) = unit_rows(k_raw);
    let (vu, vz) = unit_rows(v_raw);
    let zero = |i: usize| kz[i] || vz[i];
    let redundant = (1..n)
        .filter(|&k| {
            (0..k).any(|j| {
                let r = if zero(k) || zero(j) {
                    0.0
                } else {
                    unit_redundancy(&ku[k], &vu[k], &ku[j], &vu[j])
                };
                r >= tau
            })
        })
        .count();
    Ok(redundant as f64 / n as f64)
}

/// Sparsity and redundancy of one head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadDiagnostics {
    pub head: usize,
    pub sparsity_rate: f64,
    pub redundancy_rate: f64,
}
