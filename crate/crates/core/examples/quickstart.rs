// Prefill a prompt under Evict-then-Merge, then decode a few tokens.

use emskv::synth::{gen_synthetic, SynthKind, SynthParams};
use emskv::trace::Block;
use emskv::{decode_step, prefill, CompressionConfig, Policy};

pub fn run_example() -> emskv::Result<()> {
    let params = SynthParams { tokens: 200, dim: 16, decode_steps: 8, level: 0.7, ..Default::default() };
    let trace = gen_synthetic(SynthKind::Redundant, 1, &params)?;
    let config = CompressionConfig { n_budget: 32, l_win: 8, kernel_size: 5, ..Default::default() };

    let q = trace.head_block(0, 0, Block::Q)?;
    let k = trace.head_block(0, 0, Block::K)?;
    let v = trace.head_block(0, 0, Block::V)?;
    let mut pre = prefill(&q, &k, &v, &Policy::Ems, &config)?;
    println!(
        "prompt of {} tokens -> {} stored entries, {} look-up-table entries ({} live)",
        q.rows(),
        pre.cache.stored_entries(),
        pre.cache.lut().len(),
        pre.cache.live_lut_entries()
    );

    for t in 1..trace.steps.len() {
        let [qt, kt, vt] = [Block::Q, Block::K, Block::V].map(|b| trace.head_token(t, 0, b));
        let out = decode_step(qt, kt, vt, &mut pre.cache, &mut pre.scores, &Policy::Ems, &config)?;
        println!(
            "step {t}: attended {} logical tokens through {} stored entries, argmax at position {:?}",
            out.positions.len(),
            pre.cache.stored_entries(),
            out.argmax_position()
        );
    }
    pre.cache.validate()?;
    let m = pre.cache.memory();
    println!("memory: {} bytes ({} kv, {} scalars, {} lut)", m.total_bytes, m.kv_bytes, m.scalar_bytes, m.lut_bytes);
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
