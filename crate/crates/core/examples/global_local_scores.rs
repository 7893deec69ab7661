// Global scores favor early tokens; the Global-Local score corrects that by
// aligning the global score to the local window's mass and taking the max.

use emskv::scoring::{combine_glo_loc, prefill_scores};
use emskv::Matrix;

fn top(score: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn run_example() -> emskv::Result<()> {
    let (n, d) = (64, 4);
    // Uniform queries: every row spreads its mass evenly over its prefix.
    let q = Matrix::zeros(n, d);
    let mut k = Matrix::zeros(n, d);
    for i in 0..n {
        k.set(i, i % d, 1.0);
    }
    // A late token that the final rows attend to strongly.
    let mut q_late = q.clone();
    for i in n - 8..n {
        q_late.set(i, 0, 3.0);
    }
    k.set(50, 0, 2.0);

    let (glo, loc) = prefill_scores(&q_late, &k, 8)?;
    let combined = combine_glo_loc(&glo, &loc)?;
    println!("sum of global score = {:.6} (one unit per query row)", glo.iter().sum::<f64>());
    println!("sum of local score  = {:.6} (one unit per window row)", loc.iter().sum::<f64>());
    println!("top-5 by global:       {:?}", top(&glo, 5));
    println!("top-5 by local:        {:?}", top(&loc, 5));
    println!("top-5 by global-local: {:?}", top(&combined, 5));
    Ok(())
}

fn main() -> emskv::Result<()> {
    run_example()
}
