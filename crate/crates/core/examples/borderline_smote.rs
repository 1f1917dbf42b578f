//! Borderline-SMOTE1 on an imbalanced two-class cloud.
//!
//! cargo run --example borderline_smote

use keydyn::preprocess::{borderline_smote, SmoteConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, n, centre) in [(0usize, 60, 0.0), (1, 12, 1.2)] {
        for _ in 0..n {
            rows.push(vec![centre + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(class);
        }
    }
    let out = borderline_smote(&rows, &labels, SmoteConfig::default())?;
    let count = |c| out.labels.iter().filter(|&&l| l == c).count();
    println!("before: 60 / 12, after: {} / {}", count(0), count(1));
    println!("danger samples per class: {:?}", out.danger_counts);
    if !out.fallback_classes.is_empty() {
        println!("plain SMOTE used for classes {:?}", out.fallback_classes);
    }
    for r in out.rows[out.original..].iter().take(5) {
        println!("synthetic ({:+.3}, {:+.3})", r[0], r[1]);
    }
    Ok(())
}
