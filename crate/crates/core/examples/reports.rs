// JSON and CSV reports for the same experiment.

use emskv::experiment::run_experiment;
use emskv::report::{render_report, ReportFormat};
use emskv::synth::{gen_synthetic, SynthKind, SynthParams};
use emskv::{CompressionConfig, Policy};

pub fn run_example() -> emskv::Result<()> {
    let params = SynthParams { tokens: 64, heads: 1, dim: 8, decode_steps: 3, ..Default::default() };
    let trace = gen_synthetic(SynthKind::Random, 5, &params)?;
    let config = CompressionConfig { n_budget: 16, l_win: 4, kernel_size: 3, ..Default::default() };
    let report = run_experiment(&trace, &[Policy::H2o, Policy::Ems], &config)?;

    let json = render_report(&report, ReportFormat::Json)?;
    println!("json report: {} bytes, schema version {}", json.len(), report.schema_version);
    let csv = render_report(&report, ReportFormat::Csv)?;
    for line in csv.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
