//! A small experiment matrix on a synthetic population, rendered as the
//! Markdown tables `keydyn matrix` writes.
//!
//! cargo run --release --example full_matrix -- [seeds] [jobs]

use keydyn::features::DeviceConfig;
use keydyn::ingest::Mode;
use keydyn::protocol::{full_matrix, leakage_audit, render_markdown, FeatureStore, MatrixPlan, ModelKind, Task};
use keydyn::synth::{generate, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().map_or(Ok(2), |s| s.parse())?;
    let jobs: usize = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let ds = generate(&GeneratorConfig::default())?.to_dataset()?;
    let store = FeatureStore::new(&ds);
    let plan = MatrixPlan {
        tasks: vec![Task::Gender, Task::Age],
        device_configs: DeviceConfig::ALL.to_vec(),
        modes: Mode::ALL.to_vec(),
        models: ["NaiveBayes", "SVM", "KNN"].iter().map(|m| m.parse()).collect::<Result<Vec<ModelKind>, _>>()?,
        seeds: (0..seeds).collect(),
        selector_k: vec![32, 64],
        settings: Default::default(),
    };
    let out = full_matrix(&store, &plan, jobs);
    let table = out.table();
    for &task in &plan.tasks {
        println!("{}", render_markdown(&table, task, true));
    }
    println!("leakage audit: {} violations", leakage_audit(&out.cells).len());
    Ok(())
}
