//! Mutual-information ranking with a few planted informative columns.
//!
//! cargo run --example mi_selection

use keydyn::preprocess::{select_top_k, SelectionTarget, DEFAULT_MI_BINS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let planted = [3usize, 11, 17];
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut age = Vec::new();
    for _ in 0..300 {
        let c = rng.random_range(0..3usize);
        let a: f64 = rng.random_range(19.0..35.0);
        let mut r: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        for (i, &p) in planted.iter().enumerate() {
            r[p] = c as f64 * (i + 1) as f64 + rng.random_range(0.0..1.5);
        }
        r[20] = a.ln() + rng.random_range(0.0..0.05);
        rows.push(r);
        y.push(c);
        age.push(a);
    }
    let sel = select_top_k(&rows, SelectionTarget::Classes(&y), 5, DEFAULT_MI_BINS)?;
    println!("classes: top 5 columns {:?}", sel.selected);
    for &j in &sel.selected {
        println!("  column {j:>2}: {:.3} nats", sel.scores[j]);
    }
    let sel = select_top_k(&rows, SelectionTarget::Values(&age), 3, DEFAULT_MI_BINS)?;
    println!("age (quartile bins): top 3 columns {:?}", sel.selected);
    Ok(())
}
