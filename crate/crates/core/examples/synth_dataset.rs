//! Generate a synthetic population, write it to disk and read it back.
//!
//! cargo run --example synth_dataset -- [out_dir] [users] [signal] [seed]

use std::path::PathBuf;

use keydyn::ingest::{dataset_summary, load_dir};
use keydyn::synth::{generate, write_dataset, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("synthetic", String::as_str));
    let cfg = GeneratorConfig {
        n_users: args.get(1).map_or(Ok(117), |s| s.parse())?,
        signal_strength: args.get(2).map_or(Ok(1.0), |s| s.parse())?,
        seed: args.get(3).map_or(Ok(7), |s| s.parse())?,
        ..Default::default()
    };
    let data = generate(&cfg)?;
    write_dataset(&data, &out)?;
    let ds = load_dir(&out)?;
    println!("{}", serde_json::to_string_pretty(&dataset_summary(&ds))?);
    // overlaps are injected on purpose, so some flights come out negative
    println!("{} events kept, {} dropped", ds.report.kept_events, ds.report.dropped_inverted);
    Ok(())
}
