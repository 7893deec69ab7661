// Attention-level needle retrieval: a planted key at several depths, a 2%
// budget, and whether each policy still attends to it after compression.

use emskv::experiment::{run_experiment_with, ExperimentOptions};
use emskv::synth::{gen_synthetic, needle_position, SynthKind, SynthParams};
use emskv::{CompressionConfig, Policy};

pub fn run_example() -> emskv::Result<()> {
    let n = 1024;
    let config = CompressionConfig { n_budget: n / 50, l_win: 8, kernel_size: 5, ..Default::default() };
    let policies = [Policy::Ems, Policy::H2o, Policy::SnapKv, Policy::streaming_llm()];
    let options = ExperimentOptions { seed: None, diagnostics: false };
    println!("budget {} of {n} tokens", config.n_budget);
    for depth in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let params = SynthParams { tokens: n, dim: 32, decode_steps: 4, depth, question_len: 8, ..Default::default() };
        let trace = gen_synthetic(SynthKind::Needle, 7, &params)?;
        let report = run_experiment_with(&trace, &policies, &config, &options)?;
        let verdicts: Vec<String> = report
            .policies
            .iter()
            .map(|p| format!("{}={}", p.policy, if p.aggregate.all_argmax_match { "found" } else { "lost" }))
            .collect();
        println!("depth {depth:.2} (position {}): {}", needle_position(&params), verdicts.join(" "));
    }
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
