//! One matrix cell on a synthetic population: split, grid search, refit, test.
//!
//! cargo run --release --example run_experiment -- [task] [model] [signal] [seed] [k,k,..]

use std::time::Instant;

use keydyn::features::DeviceConfig;
use keydyn::ingest::Mode;
use keydyn::protocol::{run_experiment, ExperimentConfig, FeatureStore, ModelKind, ProtocolSettings, Task};
use keydyn::synth::{generate, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let task: Task = arg(0, "gender").parse()?;
    let model: ModelKind = arg(1, "XGBoost").parse()?;
    let signal: f64 = arg(2, "1.0").parse()?;
    let seed: u64 = arg(3, "0").parse()?;
    let selector_k = arg(4, "64").split(',').map(str::parse).collect::<Result<Vec<usize>, _>>()?;

    let t = Instant::now();
    let cfg = GeneratorConfig { signal_strength: signal, seed, ..Default::default() };
    let data = generate(&cfg)?.to_dataset()?;
    let store = FeatureStore::new(&data);
    println!("{} users, features cached in {:.1?}", data.user_count(), t.elapsed());

    let settings = ProtocolSettings::default();
    let config = ExperimentConfig {
        task,
        device_config: DeviceConfig::Combined,
        mode: Mode::Free,
        model,
        grid: settings.grid_for(model, task),
        selector_k,
        seed,
    };
    let t = Instant::now();
    let r = run_experiment(&config, &store, &settings)?;
    let p = &r.provenance;
    let w = &p.grid[p.winner];
    println!("{task} {model}: metric {:.4} (baseline {:.4}) in {:.1?}", r.metric, p.baseline, t.elapsed());
    println!("winner k={} {:?}, cv mean {:?}", w.selector_k, w.params, w.mean);
    println!("{} features before selection; test balance {:?}", p.feature_count, p.test_balance);
    for note in &p.smote_notes {
        println!("note: {note}");
    }
    Ok(())
}
