//! Persona-conditioned synthetic keystroke data. Holds and flights are
//! log-normal; each soft label shifts their log-means by a configurable
//! amount, scaled by `signal_strength`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{
    write_events, write_labels, Device, Gender, KeyEvent, Major, Mode, SoftLabels, TypingStyle,
};

/// Shifts to the log-mean of holds and flights, at signal strength 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shift {
    pub hold: f64,
    pub flight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectTable {
    pub female: Shift,
    pub non_cs: Shift,
    pub style_must_look: Shift,
    pub style_occasional: Shift,
    /// Per year above the population mean age.
    pub age_per_year: Shift,
    /// Per inch above the population mean height.
    pub height_per_inch: Shift,
    /// Standard deviation of each user's idiosyncratic offset.
    pub user_jitter: Shift,
}

impl Default for EffectTable {
    fn default() -> Self {
        Self {
            female: Shift { hold: 0.25, flight: -0.05 },
            non_cs: Shift { hold: -0.08, flight: 0.10 },
            // ln 1.6: must-look typists are 60% slower between keys
            style_must_look: Shift { hold: 0.10, flight: 1.6f64.ln() },
            style_occasional: Shift { hold: 0.05, flight: 0.30 },
            age_per_year: Shift { hold: 0.01, flight: 0.01 },
            height_per_inch: Shift { hold: -0.008, flight: 0.0 },
            user_jitter: Shift { hold: 0.03, flight: 0.03 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingModel {
    /// Log-ms.
    pub hold_mu: f64,
    pub hold_sigma: f64,
    /// Log-ms of the release-to-next-press gap.
    pub flight_mu: f64,
    pub flight_sigma: f64,
    pub overlap_probability: f64,
    pub phone_multiplier: f64,
    pub tablet_multiplier: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            hold_mu: 100f64.ln(),
            hold_sigma: 0.25,
            flight_mu: 150f64.ln(),
            flight_sigma: 0.40,
            overlap_probability: 0.05,
            phone_multiplier: 1.3,
            tablet_multiplier: 1.2,
        }
    }
}

impl TimingModel {
    pub fn device_multiplier(&self, device: Device) -> f64 {
        match device {
            Device::Desktop => 1.0,
            Device::Phone => self.phone_multiplier,
            Device::Tablet => self.tablet_multiplier,
        }
    }
}

pub const FIXED_SENTENCES: [&str; 2] = [
    "the quick brown fox jumps over the lazy dog.",
    "pack my box with five dozen liquor jugs, then wait for the train.",
];

pub const WORD_POOL: [&str; 60] = [
    "the", "and", "that", "have", "for", "not", "with", "you", "this", "but", "his", "from", "they", "say", "her",
    "she", "will", "one", "all", "would", "there", "their", "what", "out", "about", "who", "get", "which", "when",
    "make", "can", "like", "time", "just", "him", "know", "take", "people", "into", "year", "your", "good", "some",
    "could", "them", "see", "other", "than", "then", "now", "look", "only", "come", "its", "over", "think", "also",
    "back", "after", "use",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub keystrokes_per_stream: usize,
    pub signal_strength: f64,
    pub seed: u64,
    pub effects: EffectTable,
    pub timing: TimingModel,
    pub fixed_sentences: Vec<String>,
    pub word_pool: Vec<String>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 117,
            keystrokes_per_stream: 400,
            signal_strength: 1.0,
            seed: 7,
            effects: EffectTable::default(),
            timing: TimingModel::default(),
            fixed_sentences: FIXED_SENTENCES.iter().map(|s| s.to_string()).collect(),
            word_pool: WORD_POOL.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_users < 4 {
            return Err(format!("n_users must be at least 4, got {}", self.n_users));
        }
        if self.keystrokes_per_stream < 100 {
            return Err(format!("keystrokes_per_stream must be at least 100, got {}", self.keystrokes_per_stream));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err("signal_strength must be finite and non-negative".into());
        }
        let t = &self.timing;
        if !(t.hold_sigma > 0.0 && t.flight_sigma > 0.0 && t.phone_multiplier > 0.0 && t.tablet_multiplier > 0.0) {
            return Err("timing spreads and device multipliers must be positive".into());
        }
        if !(0.0..=1.0).contains(&t.overlap_probability) {
            return Err("overlap_probability must lie in [0, 1]".into());
        }
        if self.fixed_sentences.iter().all(|s| s.trim().is_empty()) || self.word_pool.is_empty() {
            return Err("text sources must be non-empty".into());
        }
        Ok(())
    }
}

pub const AGE_MEAN: f64 = 24.97;
pub const AGE_STD: f64 = 3.11;
pub const AGE_BOUNDS: (f64, f64) = (19.0, 35.0);
pub const HEIGHT_MEAN: f64 = 66.96;
pub const HEIGHT_STD: f64 = 4.02;
pub const HEIGHT_BOUNDS: (f64, f64) = (54.0, 74.0);

/// Stable 64-bit FNV-1a over the given parts, separated by a zero byte.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.iter().chain(&[0u8]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let seed_bytes = seed.to_le_bytes();
    let mut all: Vec<&[u8]> = vec![&seed_bytes];
    all.extend(parts.iter().map(|p| p.as_bytes()));
    ChaCha8Rng::seed_from_u64(stable_hash(&all))
}

/// Category counts proportional to `weights`, summing to `n` (largest
/// remainder; ties go to the earlier category).
pub fn proportional_counts(n: usize, weights: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|w| n * w / total).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(n * weights[i] % total), i));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn shuffled_categories<T: Copy>(rng: &mut ChaCha8Rng, n: usize, cats: &[T], weights: &[usize]) -> Vec<T> {
    let counts = proportional_counts(n, weights);
    let mut v: Vec<T> = cats.iter().zip(&counts).flat_map(|(c, &k)| std::iter::repeat_n(*c, k)).collect();
    v.shuffle(rng);
    v
}

fn clipped_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, (lo, hi): (f64, f64)) -> u32 {
    let d = Normal::new(mean, std).expect("valid normal");
    d.sample(rng).round().clamp(lo, hi) as u32
}

pub fn user_id(i: usize) -> String {
    format!("u{:03}", i + 1)
}

/// Users with labels matching the reference marginals: gender 72:45,
/// major 66:50, style 6:31:80, age and height clipped normals.
pub fn sample_population(cfg: &GeneratorConfig) -> Vec<(String, SoftLabels)> {
    let n = cfg.n_users;
    let mut rng = rng_for(cfg.seed, &["population"]);
    let genders = shuffled_categories(&mut rng, n, &[Gender::Male, Gender::Female], &[72, 45]);
    let majors = shuffled_categories(&mut rng, n, &[Major::Cs, Major::NonCs], &[66, 50]);
    let styles = shuffled_categories(
        &mut rng,
        n,
        &[TypingStyle::MustLook, TypingStyle::OccasionalLook, TypingStyle::NoLook],
        &[6, 31, 80],
    );
    (0..n)
        .map(|i| {
            let age = clipped_normal(&mut rng, AGE_MEAN, AGE_STD, AGE_BOUNDS);
            let height = clipped_normal(&mut rng, HEIGHT_MEAN, HEIGHT_STD, HEIGHT_BOUNDS);
            let labels = SoftLabels { gender: genders[i], major: majors[i], style: styles[i], age, height };
            (user_id(i), labels)
        })
        .collect()
}

/// Per-user timing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub user_id: String,
    pub labels: SoftLabels,
    pub base_hold_mu: f64,
    pub base_flight_mu: f64,
}

impl PersonaSpec {
    pub fn new(cfg: &GeneratorConfig, user_id: &str, labels: SoftLabels) -> Self {
        let e = &cfg.effects;
        let mut shift = Shift { hold: 0.0, flight: 0.0 };
        let mut add = |s: Shift, w: f64| {
            shift.hold += s.hold * w;
            shift.flight += s.flight * w;
        };
        if labels.gender == Gender::Female {
            add(e.female, 1.0);
        }
        if labels.major == Major::NonCs {
            add(e.non_cs, 1.0);
        }
        match labels.style {
            TypingStyle::MustLook => add(e.style_must_look, 1.0),
            TypingStyle::OccasionalLook => add(e.style_occasional, 1.0),
            TypingStyle::NoLook => {}
        }
        add(e.age_per_year, f64::from(labels.age) - AGE_MEAN);
        add(e.height_per_inch, f64::from(labels.height) - HEIGHT_MEAN);
        let mut rng = rng_for(cfg.seed, &["persona", user_id]);
        let z: (f64, f64) = (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
        add(Shift { hold: e.user_jitter.hold * z.0, flight: e.user_jitter.flight * z.1 }, 1.0);
        let s = cfg.signal_strength;
        Self {
            user_id: user_id.to_string(),
            labels,
            base_hold_mu: cfg.timing.hold_mu + s * shift.hold,
            base_flight_mu: cfg.timing.flight_mu + s * shift.flight,
        }
    }
}

fn char_key(c: char) -> Option<String> {
    match c {
        'a'..='z' | '0'..='9' => Some(c.to_string()),
        'A'..='Z' => Some(c.to_ascii_lowercase().to_string()),
        ' ' => Some("space".into()),
        '.' => Some("period".into()),
        ',' => Some("comma".into()),
        _ => None,
    }
}

fn key_sequence(cfg: &GeneratorConfig, mode: Mode, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut keys = Vec::with_capacity(n);
    let sentences: Vec<&String> = cfg.fixed_sentences.iter().filter(|s| !s.trim().is_empty()).collect();
    let mut next = 0;
    while keys.len() < n {
        let chunk = match mode {
            Mode::Fixed => {
                let s = format!("{} ", sentences[next % sentences.len()]);
                next += 1;
                s
            }
            Mode::Free => format!("{} ", cfg.word_pool.choose(rng).expect("non-empty pool")),
        };
        keys.extend(chunk.chars().filter_map(char_key));
    }
    keys.truncate(n);
    keys
}

/// One session stream. Press times strictly increase; with the overlap
/// probability the next key goes down before the current one is released.
pub fn generate_stream(
    cfg: &GeneratorConfig,
    persona: &PersonaSpec,
    device: Device,
    mode: Mode,
    n_keys: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<KeyEvent> {
    let t = &cfg.timing;
    let scale = t.device_multiplier(device).ln();
    let hold = LogNormal::new(persona.base_hold_mu + scale, t.hold_sigma).expect("valid hold law");
    let flight = LogNormal::new(persona.base_flight_mu + scale, t.flight_sigma).expect("valid flight law");
    let keys = key_sequence(cfg, mode, n_keys, rng);
    let mut out = Vec::with_capacity(keys.len());
    let mut press: i64 = 1_000;
    for key in keys {
        let h = (hold.sample(rng).round() as i64).max(1);
        out.push(KeyEvent {
            user_id: persona.user_id.clone(),
            device,
            mode,
            key,
            press_ms: press,
            release_ms: press + h,
        });
        press = if rng.random::<f64>() < t.overlap_probability {
            // next press lands strictly inside the current hold
            press + rng.random_range(1..h.max(2))
        } else {
            press + h + (flight.sample(rng).round() as i64).max(1)
        };
    }
    out
}

/// A complete synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub labels: BTreeMap<String, SoftLabels>,
    pub events: Vec<KeyEvent>,
}

impl SyntheticData {
    /// The in-memory dataset ingest would build from the written files.
    pub fn to_dataset(&self) -> Result<crate::ingest::Dataset, crate::ingest::IngestError> {
        crate::ingest::build_dataset(self.events.clone(), &self.labels)
    }
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticData, String> {
    cfg.validate()?;
    let population = sample_population(cfg);
    let mut events = Vec::new();
    for (id, labels) in &population {
        let persona = PersonaSpec::new(cfg, id, *labels);
        for device in Device::ALL {
            for mode in Mode::ALL {
                let mut rng = rng_for(cfg.seed, &["stream", id, device.as_str(), mode.as_str()]);
                events.extend(generate_stream(cfg, &persona, device, mode, cfg.keystrokes_per_stream, &mut rng));
            }
        }
    }
    Ok(SyntheticData { labels: population.into_iter().collect(), events })
}

/// Writes `events.csv` and `labels.csv` into `dir`.
pub fn write_dataset(data: &SyntheticData, dir: &Path) -> Result<(), crate::Error> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::Path(dir.display().to_string(), e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .map(std::io::BufWriter::new)
            .map_err(|e| crate::Error::Path(p.display().to_string(), e))
    };
    write_events(create("events.csv")?, &data.events)?;
    write_labels(create("labels.csv")?, &data.labels)?;
    Ok(())
}
