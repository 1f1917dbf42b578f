//! Finite-difference gradient checks on each layer family, then a short
//! training run of each reference architecture.
//!
//! cargo run --release --example neural_gradcheck

use keydyn::neural::{build_architecture, gradient_check, train_network, ArchKind, ArchOptions, Head, Phase, Target, TrainConfig};
use keydyn::selftest::gradient_cases;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, net, x, y) in gradient_cases() {
        let g = gradient_check(&net, &x, Target::Classes(&y), Phase::Train, 3, 1e-5)?;
        println!("{name:>18}: max relative error {:.2e}", g.max_relative_error);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..80 {
        let c = rng.random_range(0..2usize);
        rows.push((0..40).map(|j| rng.random_range(-1.0..1.0) + if j % 5 == 0 { c as f64 } else { 0.0 }).collect());
        y.push(c);
    }
    let cfg = TrainConfig { epochs: 15, learning_rate: 1e-2, ..Default::default() };
    let opts = ArchOptions { recurrent_hidden: 16, recurrent_layers: 1, ..Default::default() };
    for kind in ArchKind::ALL {
        let spec = build_architecture(kind, 40, Head::Classes(2), &opts)?;
        let trained = train_network(spec, &cfg, &rows, Target::Classes(&y))?;
        let pred = trained.predict_classes(&rows)?;
        let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
        let h = &trained.history;
        println!("{kind:>4}: loss {:.3} -> {:.3}, training accuracy {acc:.2}", h[0], h[h.len() - 1]);
    }
    Ok(())
}
