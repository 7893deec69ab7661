// Writing and reading KVTR traces; the round trip is byte-identical.

use emskv::synth::{gen_synthetic, SynthKind, SynthParams};
use emskv::trace::{load_trace, save_trace, Trace};
use emskv::Error;

pub fn run_example() -> emskv::Result<()> {
    let params = SynthParams { tokens: 16, heads: 2, dim: 8, decode_steps: 4, ..Default::default() };
    let trace = gen_synthetic(SynthKind::Random, 9, &params)?;
    let path = std::env::temp_dir().join(format!("emskv-example-{}.kvtr", std::process::id()));
    save_trace(&trace, &path)?;
    let bytes = std::fs::read(&path)?;
    let loaded = load_trace(&path)?;
    std::fs::remove_file(&path)?;
    println!(
        "{} bytes: {} heads, dim {}, {} steps, prompt of {} tokens",
        bytes.len(),
        loaded.num_heads,
        loaded.head_dim,
        loaded.steps.len(),
        loaded.prompt_len()
    );
    assert_eq!(loaded.to_bytes()?, bytes);

    match Trace::from_bytes(&bytes[..30]) {
        Err(Error::Format { offset, message }) => println!("truncated file rejected at byte {offset}: {message}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
