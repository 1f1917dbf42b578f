use keydyn::features::DeviceConfig;
use keydyn::ingest::{build_dataset, write_events, Device, Gender, Major, Mode, SoftLabels, TypingStyle};
use keydyn::protocol::{run_experiment, ExperimentConfig, FeatureStore, ModelKind, ProtocolSettings, Task};
use keydyn::synth::{generate, generate_stream, GeneratorConfig, PersonaSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn zero_signal_personas_type_alike() {
    let cfg = GeneratorConfig { signal_strength: 0.0, ..Default::default() };
    let a = SoftLabels { gender: Gender::Male, major: Major::Cs, style: TypingStyle::NoLook, age: 19, height: 74 };
    let b = SoftLabels { gender: Gender::Female, major: Major::NonCs, style: TypingStyle::MustLook, age: 35, height: 54 };
    let n = 5000;
    let stream = |id: &str, l: SoftLabels, seed: u64| {
        let p = PersonaSpec::new(&cfg, id, l);
        generate_stream(&cfg, &p, Device::Tablet, Mode::Fixed, n, &mut ChaCha8Rng::seed_from_u64(seed))
    };
    let (sa, sb) = (stream("a", a, 1), stream("b", b, 2));
    let holds = |s: &[keydyn::ingest::KeyEvent]| s.iter().map(|e| e.hold_ms() as f64).collect::<Vec<_>>();
    let gaps = |s: &[keydyn::ingest::KeyEvent]| s.windows(2).map(|w| (w[1].press_ms - w[0].press_ms) as f64).collect::<Vec<_>>();
    // alpha = 0.01
    let critical = 1.628 * (2.0 / n as f64).sqrt();
    let dh = ks_statistic(&holds(&sa), &holds(&sb));
    let dg = ks_statistic(&gaps(&sa), &gaps(&sb));
    assert!(dh < critical, "holds D = {dh:.4}, critical {critical:.4}");
    assert!(dg < critical, "press gaps D = {dg:.4}, critical {critical:.4}");

    // the same pair at full signal is told apart
    let strong = GeneratorConfig { signal_strength: 1.0, ..cfg.clone() };
    let pa = PersonaSpec::new(&strong, "a", a);
    let pb = PersonaSpec::new(&strong, "b", b);
    let sa = generate_stream(&strong, &pa, Device::Tablet, Mode::Fixed, n, &mut ChaCha8Rng::seed_from_u64(1));
    let sb = generate_stream(&strong, &pb, Device::Tablet, Mode::Fixed, n, &mut ChaCha8Rng::seed_from_u64(2));
    assert!(ks_statistic(&gaps(&sa), &gaps(&sb)) > critical);
}

#[test]
fn generated_csv_is_byte_identical_and_valid() {
    let cfg = GeneratorConfig { n_users: 20, keystrokes_per_stream: 150, seed: 11, ..Default::default() };
    let bytes = |c: &GeneratorConfig| {
        let mut buf = Vec::new();
        write_events(&mut buf, &generate(c).unwrap().events).unwrap();
        buf
    };
    assert_eq!(bytes(&cfg), bytes(&cfg));
    assert_ne!(bytes(&cfg), bytes(&GeneratorConfig { seed: 12, ..cfg.clone() }));
    let data = generate(&cfg).unwrap();
    let ds = build_dataset(data.events.clone(), &data.labels).unwrap();
    assert_eq!(ds.report.dropped_inverted + ds.report.dropped_unlabeled_events, 0);
    assert_eq!(ds.report.kept_users, 20);
}

#[test]
fn gender_accuracy_grows_with_signal() {
    let settings = ProtocolSettings::default();
    let model: ModelKind = "NaiveBayes".parse().unwrap();
    let mut means = Vec::new();
    for signal in [0.0, 0.5, 1.0] {
        let mut total = 0.0;
        for seed in 0..5 {
            let cfg = GeneratorConfig { signal_strength: signal, seed, ..Default::default() };
            let ds = generate(&cfg).unwrap().to_dataset().unwrap();
            let store = FeatureStore::new(&ds);
            let config = ExperimentConfig {
                task: Task::Gender,
                device_config: DeviceConfig::Combined,
                mode: Mode::Free,
                model,
                grid: settings.grid_for(model, Task::Gender),
                selector_k: vec![32, 64],
                seed,
            };
            total += run_experiment(&config, &store, &settings).unwrap().metric;
        }
        means.push(total / 5.0);
    }
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}
