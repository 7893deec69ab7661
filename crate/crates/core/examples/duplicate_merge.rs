// Exact duplicates merge into one class center without changing attention:
// the look-up-table expands the center once per merged position.

use emskv::{attend_expanded, prefill, CacheDump, CompressionConfig, Matrix, Policy};

pub fn run_example() -> emskv::Result<()> {
    let d = 4;
    let n = 24;
    let bases = [[1.0, 0.2, 0.0, 0.0], [0.0, 1.0, 0.3, 0.0], [0.0, 0.0, 1.0, 0.4], [0.5, 0.0, 0.0, 1.0]];
    let mut rows_k = Vec::new();
    let mut rows_v = Vec::new();
    for t in 0..n {
        rows_k.push(bases[t % 4].to_vec());
        rows_v.push(bases[(t + 1) % 4].iter().map(|x| x * 2.0).collect::<Vec<f64>>());
    }
    let k = Matrix::from_rows(&rows_k)?;
    let v = Matrix::from_rows(&rows_v)?;
    let q = Matrix::zeros(n, d);
    let config = CompressionConfig { n_budget: 8, l_win: 4, gamma: 3.0, kernel_size: 1, ..Default::default() };

    let full = prefill(&q, &k, &v, &Policy::Full, &config)?;
    let ems = prefill(&q, &k, &v, &Policy::Ems, &config)?;
    let probe = [0.3, -0.2, 0.5, 0.1];
    let a = attend_expanded(&probe, &full.cache, &config)?;
    let b = attend_expanded(&probe, &ems.cache, &config)?;
    let err: f64 = a.output.iter().zip(&b.output).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    println!(
        "full cache stores {} entries, EMS stores {} and expands to {} positions; output difference {err:.2e}",
        full.cache.stored_entries(),
        ems.cache.stored_entries(),
        b.positions.len()
    );
    let dump = CacheDump::capture(&ems.cache, &ems.scores);
    let json = dump.to_json()?;
    println!("cache dump: {} bytes of JSON, {} centers", json.len(), dump.centers.len());
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
