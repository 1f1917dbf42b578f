//! Per-user timing features: raw flights of one digraph, then fitted
//! vocabularies and vectors for every device configuration.
//!
//! cargo run --example extract_features

use std::collections::BTreeMap;

use keydyn::features::{
    combine_devices, digraph_flights, fit_vocabulary, unigraph_holds, vectorize, DeviceConfig, VocabularyCaps,
};
use keydyn::ingest::{Device, Mode};
use keydyn::synth::{generate, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GeneratorConfig { n_users: 12, keystrokes_per_stream: 300, ..Default::default() };
    let ds = generate(&cfg)?.to_dataset()?;
    let users: Vec<&str> = ds.users().collect();
    let first = ds.stream(users[0], Device::Desktop, Mode::Fixed).expect("stream");

    let holds = unigraph_holds(first);
    let flights = digraph_flights(first)?;
    let ((a, b, f), v) = flights.iter().max_by_key(|(_, v)| v.len()).expect("some digraph");
    println!("{}: {} keys with hold times", users[0], holds.len());
    println!("most frequent digraph {a}{b} {f}: {} samples, first {:?}", v.len(), &v[..v.len().min(5)]);

    let caps = VocabularyCaps::default();
    for dc in DeviceConfig::ALL {
        let mut per_user: Vec<BTreeMap<Device, _>> = vec![BTreeMap::new(); users.len()];
        let mut names = Vec::new();
        for &device in dc.devices() {
            let training = users.iter().filter_map(|u| ds.stream(u, device, Mode::Free).map(|s| (*u, s)));
            let vocab = fit_vocabulary(device, Mode::Free, training, caps)?;
            names.extend(vocab.names());
            for (u, slot) in users.iter().zip(per_user.iter_mut()) {
                slot.insert(device, vectorize(u, ds.stream(u, device, Mode::Free).unwrap_or(&[]), &vocab));
            }
        }
        let vectors: Vec<_> = per_user
            .into_iter()
            .map(|mut m| if dc == DeviceConfig::Combined { combine_devices(&m) } else { Ok(m.pop_first().unwrap().1) })
            .collect::<Result<_, _>>()?;
        let masked = vectors.iter().flat_map(|v| &v.missing_mask).filter(|&&m| m).count();
        println!("{dc:>8} free: {} features, {masked} masked entries over {} users", names.len(), vectors.len());
        for (n, x) in names.iter().zip(&vectors[0].values).take(3) {
            println!("           {n} = {x:.2}");
        }
    }
    Ok(())
}
