// Merged entries expanded at their own positions versus at the center's
// position, and zero-class merging versus explicit eviction.

use emskv::experiment::{run_experiment_with, ExperimentOptions};
use emskv::synth::{gen_synthetic, SynthKind, SynthParams};
use emskv::{CompressionConfig, EvictionMode, Policy, PositionMode};

pub fn run_example() -> emskv::Result<()> {
    let params = SynthParams { tokens: 256, dim: 16, decode_steps: 16, level: 0.8, ..Default::default() };
    let trace = gen_synthetic(SynthKind::Redundant, 4, &params)?;
    let options = ExperimentOptions { seed: Some(4), diagnostics: false };
    for position_mode in [PositionMode::WithPos, PositionMode::WithoutPos] {
        for eviction_mode in [EvictionMode::ZeroClass, EvictionMode::Explicit] {
            let config = CompressionConfig {
                n_budget: 32,
                l_win: 8,
                kernel_size: 5,
                position_mode,
                eviction_mode,
                ..Default::default()
            };
            let report = run_experiment_with(&trace, &[Policy::Ems], &config, &options)?;
            let a = &report.policies[0].aggregate;
            println!(
                "{position_mode:?}/{eviction_mode:?}: mean L2 {:.5}, final LUT bytes {}",
                a.mean_l2_error,
                report.policies[0].steps.last().map_or(0, |s| s.memory.lut_bytes)
            );
        }
    }
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
