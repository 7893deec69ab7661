use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emskv::experiment::{analyze_trace, run_experiment_with, ExperimentOptions};
use emskv::report::{diagnostics_csv, emit_report, ReportFormat};
use emskv::synth::{gen_synthetic, SynthKind, SynthParams};
use emskv::trace::{load_trace, save_trace};
use emskv::{CompressionConfig, Error, PositionMode, Policy, Result};

/// Evict-then-merge KV cache compression benchmark harness.
#[derive(Parser)]
#[command(name = "emskv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace under a policy and the full-cache reference.
    Run(RunArgs),
    /// Generate a synthetic KVTR trace.
    Synth(SynthArgs),
    /// Emit per-head sparsity and redundancy rates of a trace's prompt.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct Knobs {
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long = "kernel-size")]
    kernel_size: Option<usize>,
    /// Expand merged entries at their own positions (default).
    #[arg(long, conflicts_with = "no_pos")]
    pos: bool,
    /// Expand merged entries at their center's position.
    #[arg(long = "no-pos")]
    no_pos: bool,
}

impl Knobs {
    fn config(&self) -> Result<CompressionConfig> {
        let mut c = CompressionConfig::default();
        if let Some(x) = self.budget {
            c.n_budget = x;
        }
        if let Some(x) = self.window {
            c.l_win = x;
        }
        if let Some(x) = self.tau {
            c.tau = x;
        }
        if let Some(x) = self.gamma {
            c.gamma = x;
        }
        if let Some(x) = self.zeta {
            c.zeta = x;
        }
        if let Some(x) = self.kernel_size {
            c.kernel_size = x;
        }
        if self.no_pos {
            c.position_mode = PositionMode::WithoutPos;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    trace: PathBuf,
    /// full, streaming, h2o, snapkv or ems; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',', default_value = "ems")]
    policy: Vec<String>,
    #[command(flatten)]
    knobs: Knobs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "json")]
    format: String,
    /// Seed to echo into the report.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tokens: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    decode: usize,
    #[arg(long)]
    depth: Option<f64>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    knobs: Knobs,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let config = a.knobs.config()?;
            let format: ReportFormat = a.format.parse()?;
            let policies = a.policy.iter().map(|p| p.parse()).collect::<Result<Vec<Policy>>>()?;
            let trace = load_trace(&a.trace)?;
            let options = ExperimentOptions { seed: a.seed, diagnostics: true };
            let report = run_experiment_with(&trace, &policies, &config, &options)?;
            emit_report(&report, format, &a.out)
        }
        Command::Synth(a) => {
            let kind: SynthKind = a.kind.parse()?;
            let mut params = SynthParams {
                tokens: a.tokens,
                heads: a.heads,
                dim: a.dim,
                decode_steps: a.decode,
                ..Default::default()
            };
            if let Some(d) = a.depth {
                params.depth = d;
            }
            if let Some(l) = a.level {
                params.level = l;
            }
            let trace = gen_synthetic(kind, a.seed, &params).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m),
                other => other,
            })?;
            save_trace(&trace, &a.out)
        }
        Command::Analyze(a) => {
            let config = a.knobs.config()?;
            let trace = load_trace(&a.trace)?;
            let rows = analyze_trace(&trace, &config)?;
            std::fs::write(&a.out, diagnostics_csv(&rows))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emskv: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Format { .. } => 3,
                _ => 1,
            })
        }
    }
}
