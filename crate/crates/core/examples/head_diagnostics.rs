// Per-head sparsity and redundancy rates of synthetic prompts.

use emskv::experiment::analyze_trace;
use emskv::report::diagnostics_csv;
use emskv::synth::{gen_synthetic, SynthKind, SynthParams};
use emskv::CompressionConfig;

pub fn run_example() -> emskv::Result<()> {
    let config = CompressionConfig { n_budget: 32, l_win: 8, ..Default::default() };
    for kind in [SynthKind::Random, SynthKind::Redundant, SynthKind::Needle] {
        let params = SynthParams { tokens: 160, heads: 3, dim: 16, decode_steps: 0, level: 0.75, ..Default::default() };
        let trace = gen_synthetic(kind, 3, &params)?;
        let rows = analyze_trace(&trace, &config)?;
        println!("{kind} trace (zeta {}, tau {}):", config.zeta, config.tau);
        print!("{}", diagnostics_csv(&rows));
    }
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
