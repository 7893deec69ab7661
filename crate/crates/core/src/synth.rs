//! Seeded synthetic workloads.
//!
//! * `random`: i.i.d. standard Gaussian Q, K and V.
//! * `redundant`: every token is a slightly perturbed copy of one of
//!   `floor((1 - level) * N)` base key/value pairs, so at least a `level`
//!   fraction of tokens has a near-identical predecessor.
//! * `needle`: a Gaussian haystack with one planted key at a requested depth.
//!   The last rotary pair is reserved as a needle channel: haystack keys and
//!   ordinary queries leave it at zero, the needle lives entirely in it, and
//!   the prompt's closing question rows plus every decode query point at the
//!   needle through it. Queries are pre-rotated for the standard rotary base
//!   so the alignment is exact when positions are encoded. This is an
//!   attention-level analog of a needle-in-a-haystack retrieval, not a text
//!   benchmark.
//!
//! All reals are rounded through `f32` so that a generated trace equals its
//! saved-and-reloaded copy.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{apply_rope, RopeParams};
use crate::error::{invalid, Error, Result};
use crate::trace::{StepKind, Trace, TraceStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Random,
    Redundant,
    Needle,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Random => "random",
            SynthKind::Redundant => "redundant",
            SynthKind::Needle => "needle",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SynthKind::Random),
            "redundant" => Ok(SynthKind::Redundant),
            "needle" => Ok(SynthKind::Needle),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Prompt length.
    pub tokens: usize,
    pub heads: usize,
    pub dim: usize,
    pub decode_steps: usize,
    /// Needle depth as a fraction of the haystack body, in `[0, 1]`.
    pub depth: f64,
    /// Requested redundancy level, in `[0, 1]`.
    pub level: f64,
    /// Relative perturbation of redundant copies.
    pub noise: f64,
    /// Closing prompt rows that ask for the needle.
    pub question_len: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            tokens: 256,
            heads: 1,
            dim: 32,
            decode_steps: 16,
            depth: 0.5,
            level: 0.8,
            noise: 0.05,
            question_len: 16,
        }
    }
}

impl SynthParams {
    pub fn validate(&self, kind: SynthKind) -> Result<()> {
        if self.tokens == 0 || self.heads == 0 || self.dim == 0 {
            return Err(invalid("tokens, heads and dim must be positive"));
        }
        match kind {
            SynthKind::Random => {}
            SynthKind::Redundant => {
                if !(0.0..=1.0).contains(&self.level) {
                    return Err(invalid(format!("level {} outside [0, 1]", self.level)));
                }
                if !(self.noise >= 0.0 && self.noise.is_finite()) {
                    return Err(invalid("noise must be finite and non-negative"));
                }
            }
            SynthKind::Needle => {
                if !(0.0..=1.0).contains(&self.depth) {
                    return Err(invalid(format!("depth {} outside [0, 1]", self.depth)));
                }
                if self.dim < 4 || !self.dim.is_multiple_of(2) {
                    return Err(invalid("needle traces need an even dim of at least 4"));
                }
                if self.tokens < self.question_len + 2 {
                    return Err(invalid(format!(
                        "needle traces need more than {} tokens",
                        self.question_len + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Prompt position of the needle for `params`.
pub fn needle_position(params: &SynthParams) -> usize {
    let body = params.tokens - params.question_len;
    ((params.depth * (body - 1) as f64).round() as usize).min(body - 1)
}

pub fn gen_synthetic(kind: SynthKind, seed: u64, params: &SynthParams) -> Result<Trace> {
    params.validate(kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = params.tokens + params.decode_steps;
    let (h, d) = (params.heads, params.dim);
    // tokens[t][head] = (q, k, v)
    let mut tokens: Vec<Vec<[Vec<f64>; 3]>> = Vec::with_capacity(total);
    match kind {
        SynthKind::Random => {
            for _ in 0..total {
                tokens.push((0..h).map(|_| [gauss(&mut rng, d), gauss(&mut rng, d), gauss(&mut rng, d)]).collect());
            }
        }
        SynthKind::Redundant => {
            let bases = (((1.0 - params.level) * params.tokens as f64 + 1e-9).floor() as usize).max(1);
            let base_kv: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..h)
                .map(|_| (0..bases).map(|_| (gauss(&mut rng, d), gauss(&mut rng, d))).collect())
                .collect();
            for _ in 0..total {
                let mut row = Vec::with_capacity(h);
                for per_head in &base_kv {
                    let b = rng.gen_range(0..bases);
                    let (bk, bv) = &per_head[b];
                    let k = perturb(&mut rng, bk, params.noise);
                    let v = perturb(&mut rng, bv, params.noise);
                    row.push([gauss(&mut rng, d), k, v]);
                }
                tokens.push(row);
            }
        }
        SynthKind::Needle => {
            let rope = RopeParams::standard(d)?;
            let needle_at = needle_position(params);
            let question_from = params.tokens - params.question_len;
            // Target logit margin over the largest Gaussian haystack logit.
            let logit = (2.0 * (total as f64).ln()).sqrt() + 3.0;
            let key_scale = (d as f64).sqrt();
            let query_scale = logit;
            let mut needle_key = vec![0.0; d];
            needle_key[d - 2] = key_scale;
            let needle_rot = apply_rope(&needle_key, needle_at, &rope)?;
            for t in 0..total {
                let mut row = Vec::with_capacity(h);
                for _ in 0..h {
                    let mut q = gauss(&mut rng, d);
                    let mut k = gauss(&mut rng, d);
                    let v = gauss(&mut rng, d);
                    q[d - 2] = 0.0;
                    q[d - 1] = 0.0;
                    k[d - 2] = 0.0;
                    k[d - 1] = 0.0;
                    if t == needle_at {
                        k = needle_key.clone();
                    }
                    if t >= question_from {
                        let aim = aim_query(&needle_rot, t, query_scale / key_scale, &rope)?;
                        q[d - 2] = aim[d - 2];
                        q[d - 1] = aim[d - 1];
                    }
                    row.push([q, k, v]);
                }
                tokens.push(row);
            }
        }
    }
    let trace = assemble(h, d, params.tokens, tokens);
    trace.validate()?;
    Ok(trace)
}

fn gauss(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn perturb(rng: &mut ChaCha8Rng, base: &[f64], noise: f64) -> Vec<f64> {
    let scale = noise * (base.iter().map(|x| x * x).sum::<f64>() / base.len() as f64).sqrt();
    base.iter()
        .map(|&x| x + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Raw query that, once rotated to `position`, is `scale` times the rotated
/// needle key.
fn aim_query(needle_rot: &[f64], position: usize, scale: f64, rope: &RopeParams) -> Result<Vec<f64>> {
    // Rotating by -position is rotating by +position with negated angles;
    // for a single pair that equals conjugation, done here by swapping signs.
    let d = needle_rot.len();
    let mut conj = needle_rot.to_vec();
    for i in (0..d).step_by(2) {
        conj[i + 1] = -conj[i + 1];
    }
    let mut back = apply_rope(&conj, position, rope)?;
    for i in (0..d).step_by(2) {
        back[i + 1] = -back[i + 1];
    }
    Ok(back.into_iter().map(|x| x * scale).collect())
}

fn assemble(h: usize, d: usize, prompt: usize, tokens: Vec<Vec<[Vec<f64>; 3]>>) -> Trace {
    let block = |rows: &[Vec<[Vec<f64>; 3]>], which: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * h * d);
        for row in rows {
            for head in row {
                out.extend(head[which].iter().map(|&x| x as f32 as f64));
            }
        }
        out
    };
    let mut steps = Vec::with_capacity(1 + tokens.len() - prompt);
    let (head_rows, tail) = tokens.split_at(prompt);
    steps.push(TraceStep {
        kind: StepKind::Prefill,
        token_count: prompt,
        q: block(head_rows, 0),
        k: block(head_rows, 1),
        v: block(head_rows, 2),
    });
    for row in tail.chunks(1) {
        steps.push(TraceStep {
            kind: StepKind::Decode,
            token_count: 1,
            q: block(row, 0),
            k: block(row, 1),
            v: block(row, 2),
        });
    }
    Trace {
        num_heads: h,
        head_dim: d,
        steps,
    }
}
