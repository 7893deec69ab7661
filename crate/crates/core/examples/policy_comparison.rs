// Every policy against the full-cache reference on a redundant workload.

use emskv::experiment::run_experiment;
use emskv::synth::{gen_synthetic, SynthKind, SynthParams};
use emskv::{CompressionConfig, Policy};

pub fn run_example() -> emskv::Result<()> {
    let params = SynthParams { tokens: 384, heads: 2, dim: 16, decode_steps: 24, level: 0.8, ..Default::default() };
    let trace = gen_synthetic(SynthKind::Redundant, 42, &params)?;
    let config = CompressionConfig { n_budget: 48, l_win: 8, kernel_size: 5, ..Default::default() };
    let policies = [Policy::Full, Policy::streaming_llm(), Policy::H2o, Policy::SnapKv, Policy::Ems];
    let report = run_experiment(&trace, &policies, &config)?;

    println!("{:<10} {:>10} {:>10} {:>8} {:>12}", "policy", "mean L2", "mean 1-cos", "argmax", "final bytes");
    for p in &report.policies {
        let a = &p.aggregate;
        println!(
            "{:<10} {:>10.4} {:>10.4} {:>8.2} {:>12}",
            p.policy, a.mean_l2_error, a.mean_cosine_error, a.argmax_accuracy, a.final_total_bytes
        );
    }
    for d in &report.diagnostics {
        println!("head {}: sparsity {:.3}, redundancy {:.3}", d.head, d.sparsity_rate, d.redundancy_rate);
    }
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
