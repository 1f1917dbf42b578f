//! Every classical learner on one train/test split, classification and
//! regression, plus a JSON round trip.
//!
//! cargo run --release --example classical_models

use keydyn::ml::{fit, Algorithm, ModelSpec, Targets, TaskKind, TrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut x = Vec::new();
    let mut class = Vec::new();
    let mut value = Vec::new();
    for _ in 0..300 {
        let r: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        class.push(usize::from(r[0] + 0.5 * r[1] * r[2] > 0.0));
        value.push(25.0 + 3.0 * r[0] - 2.0 * r[3] + rng.random_range(-0.5..0.5));
        x.push(r);
    }
    let (train, test) = x.split_at(200);
    for algorithm in Algorithm::ALL {
        let spec = ModelSpec::new(algorithm, TaskKind::Classify)?.with_seed(3);
        let model = fit(&spec, train, Targets::Classes(&class[..200]))?;
        let again = TrainedModel::from_json(&model.to_json()?)?;
        let pred = again.predict(test)?;
        let hits = pred.classes().unwrap().iter().zip(&class[200..]).filter(|(p, t)| p == t).count();
        print!("{:>12}: accuracy {:.3}", algorithm.name(), hits as f64 / test.len() as f64);
        if algorithm.supports(TaskKind::Regress) {
            let spec = ModelSpec::new(algorithm, TaskKind::Regress)?.with_seed(3);
            let model = fit(&spec, train, Targets::Values(&value[..200]))?;
            let pred = model.predict(test)?;
            let mae = pred.values().unwrap().iter().zip(&value[200..]).map(|(p, t)| (p - t).abs()).sum::<f64>()
                / test.len() as f64;
            print!(", MAE {mae:.3}");
        }
        println!();
    }
    Ok(())
}
