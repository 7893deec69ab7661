//! KVTR binary traces.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic        4 bytes  "KVTR"
//! version      u32      1
//! num_heads    u32
//! head_dim     u32
//! step_count   u32
//! step*        kind u8 (0 = prefill, 1 = decode)
//!              token_count u32
//!              Q, K, V blocks, each token_count * num_heads * head_dim f32,
//!              row-major over (token, head, dim)
//! ```
//!
//! Reals are widened to `f64` on load and narrowed back on save, so a
//! load/save round trip is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"KVTR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Q,
    K,
    V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub kind: StepKind,
    pub token_count: usize,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub num_heads: usize,
    pub head_dim: usize,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Exactly one prefill step, first; every decode step carries one token.
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 {
            return Err(Error::InvalidArgument("trace needs at least one head and one dimension".into()));
        }
        let first = self
            .steps
            .first()
            .ok_or_else(|| Error::InvalidArgument("trace has no steps".into()))?;
        if first.kind != StepKind::Prefill || first.token_count == 0 {
            return Err(Error::InvalidArgument("trace must start with a non-empty prefill".into()));
        }
        for (i, s) in self.steps.iter().enumerate().skip(1) {
            if s.kind != StepKind::Decode || s.token_count != 1 {
                return Err(Error::InvalidArgument(format!(
                    "step {i} must be a single-token decode step"
                )));
            }
        }
        for (i, s) in self.steps.iter().enumerate() {
            let len = s.token_count * self.num_heads * self.head_dim;
            if s.q.len() != len || s.k.len() != len || s.v.len() != len {
                return Err(Error::InvalidArgument(format!("step {i} has mis-sized blocks")));
            }
        }
        Ok(())
    }

    pub fn prefill(&self) -> &TraceStep {
        &self.steps[0]
    }

    pub fn decode_steps(&self) -> &[TraceStep] {
        &self.steps[1..]
    }

    pub fn prompt_len(&self) -> usize {
        self.steps.first().map_or(0, |s| s.token_count)
    }

    /// One head's slice of a step block as a `token_count x head_dim` matrix.
    pub fn head_block(&self, step: usize, head: usize, block: Block) -> Result<Matrix> {
        let s = &self.steps[step];
        let data = match block {
            Block::Q => &s.q,
            Block::K => &s.k,
            Block::V => &s.v,
        };
        let d = self.head_dim;
        let stride = self.num_heads * d;
        let mut out = Vec::with_capacity(s.token_count * d);
        for t in 0..s.token_count {
            let at = t * stride + head * d;
            out.extend_from_slice(&data[at..at + d]);
        }
        Matrix::new(s.token_count, d, out)
    }

    /// One head's vector of a single-token step.
    pub fn head_token(&self, step: usize, head: usize, block: Block) -> &[f64] {
        let s = &self.steps[step];
        let data = match block {
            Block::Q => &s.q,
            Block::K => &s.k,
            Block::V => &s.v,
        };
        let at = head * self.head_dim;
        &data[at..at + self.head_dim]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let u32_of = |x: usize, what: &str| {
            u32::try_from(x).map_err(|_| Error::InvalidArgument(format!("{what} does not fit in u32")))
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(self.num_heads, "num_heads")?.to_le_bytes());
        out.extend_from_slice(&u32_of(self.head_dim, "head_dim")?.to_le_bytes());
        out.extend_from_slice(&u32_of(self.steps.len(), "step_count")?.to_le_bytes());
        for s in &self.steps {
            out.push(match s.kind {
                StepKind::Prefill => 0,
                StepKind::Decode => 1,
            });
            out.extend_from_slice(&u32_of(s.token_count, "token_count")?.to_le_bytes());
            for block in [&s.q, &s.k, &s.v] {
                for &x in block {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, offset: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(r.error_at(0, "bad magic, expected KVTR"));
        }
        let version_at = r.offset;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(version_at, &format!("unsupported version {version}")));
        }
        let num_heads = r.u32("num_heads")? as usize;
        let head_dim = r.u32("head_dim")? as usize;
        let steps_at = r.offset;
        let step_count = r.u32("step_count")? as usize;
        if num_heads == 0 || head_dim == 0 {
            return Err(r.error_at(12, "num_heads and head_dim must be positive"));
        }
        if step_count == 0 {
            return Err(r.error_at(steps_at, "trace has no steps"));
        }
        let mut steps = Vec::with_capacity(step_count.min(1 << 16));
        for i in 0..step_count {
            let kind_at = r.offset;
            let kind = match r.take(1, "step kind")?[0] {
                0 => StepKind::Prefill,
                1 => StepKind::Decode,
                other => return Err(r.error_at(kind_at, &format!("unknown step kind {other}"))),
            };
            if (i == 0) != (kind == StepKind::Prefill) {
                return Err(r.error_at(kind_at, "exactly one prefill step is allowed, and it must come first"));
            }
            let count_at = r.offset;
            let token_count = r.u32("token_count")? as usize;
            if token_count == 0 || (kind == StepKind::Decode && token_count != 1) {
                return Err(r.error_at(count_at, &format!("invalid token_count {token_count}")));
            }
            let len = token_count
                .checked_mul(num_heads)
                .and_then(|x| x.checked_mul(head_dim))
                .ok_or_else(|| r.error_at(count_at, "block size overflows"))?;
            let q = r.reals(len)?;
            let k = r.reals(len)?;
            let v = r.reals(len)?;
            steps.push(TraceStep { kind, token_count, q, k, v });
        }
        if r.offset != bytes.len() {
            return Err(r.error_at(r.offset, "trailing bytes after last step"));
        }
        Ok(Trace { num_heads, head_dim, steps })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Reader<'_> {
    fn error_at(&self, offset: usize, message: &str) -> Error {
        Error::Format {
            offset: offset as u64,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(out)
            }
            None => Err(self.error_at(self.offset, &format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.offset;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.error_at(start, "block size overflows"))?, "real block")?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(c.try_into().unwrap());
            if !x.is_finite() {
                return Err(self.error_at(start + 4 * i, "non-finite real"));
            }
            out.push(x as f64);
        }
        Ok(out)
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    Trace::from_bytes(&fs::read(path)?)
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, trace.to_bytes()?)?;
    Ok(())
}
