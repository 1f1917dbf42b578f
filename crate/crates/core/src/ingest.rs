//! Parsing, validation and indexing of raw keystroke logs and label files.
//!
//! Two CSV formats are understood:
//!
//! * `events.csv` with header `user_id,device,mode,key,press_ms,release_ms`,
//!   one row per keystroke carrying both timestamps.
//! * `labels.csv` with header `user_id,gender,major,style,age,height`.
//!
//! Rows are validated as they are read; [`build_dataset`] then groups events
//! into per-(user, device, mode) streams sorted by press time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EVENTS_HEADER: [&str; 6] = ["user_id", "device", "mode", "key", "press_ms", "release_ms"];
pub const LABELS_HEADER: [&str; 6] = ["user_id", "gender", "major", "style", "age", "height"];

/// Environment variable consulted when no data directory is given explicitly.
pub const DATA_DIR_ENV: &str = "KEYDYN_DATA_DIR";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("invalid enum value at line {0}")]
    InvalidEnum(usize),
    #[error("duplicate user `{0}` in labels")]
    DuplicateUser(String),
    #[error("no stream survived validation")]
    EmptyDataset,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Desktop,
    Phone,
    Tablet,
}

impl Device {
    pub const ALL: [Device; 3] = [Device::Desktop, Device::Phone, Device::Tablet];

    pub fn as_str(self) -> &'static str {
        match self {
            Device::Desktop => "desktop",
            Device::Phone => "phone",
            Device::Tablet => "tablet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Free,
    Fixed,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Free, Mode::Fixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Free => "free",
            Mode::Fixed => "fixed",
        }
    }
}

macro_rules! text_enum {
    ($ty:ty { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($variant),)+
                    _ => Err(()),
                }
            }
        }
    };
}

text_enum!(Device { "desktop" => Device::Desktop, "phone" => Device::Phone, "tablet" => Device::Tablet });
text_enum!(Mode { "free" => Mode::Free, "fixed" => Mode::Fixed });
text_enum!(Gender { "male" => Gender::Male, "female" => Gender::Female });
text_enum!(Major { "cs" => Major::Cs, "noncs" => Major::NonCs });
text_enum!(TypingStyle {
    "a" => TypingStyle::MustLook,
    "b" => TypingStyle::OccasionalLook,
    "c" => TypingStyle::NoLook,
});

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One keystroke: a press and its matching release.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub user_id: String,
    pub device: Device,
    pub mode: Mode,
    pub key: String,
    pub press_ms: i64,
    pub release_ms: i64,
}

impl KeyEvent {
    pub fn hold_ms(&self) -> i64 {
        self.release_ms - self.press_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Major {
    Cs,
    NonCs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TypingStyle {
    /// a: must look at the keypad.
    MustLook,
    /// b: occasionally looks at the keypad.
    OccasionalLook,
    /// c: need not look at the keyboard.
    NoLook,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl Major {
    pub fn as_str(self) -> &'static str {
        match self {
            Major::Cs => "cs",
            Major::NonCs => "noncs",
        }
    }
}

impl TypingStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            TypingStyle::MustLook => "a",
            TypingStyle::OccasionalLook => "b",
            TypingStyle::NoLook => "c",
        }
    }
}

/// Per-user ground truth for the five inference targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftLabels {
    pub gender: Gender,
    pub major: Major,
    pub style: TypingStyle,
    /// Years, within `[10, 100]`.
    pub age: u32,
    /// Inches, within `[36, 90]`.
    pub height: u32,
}

pub const AGE_RANGE: (u32, u32) = (10, 100);
pub const HEIGHT_RANGE: (u32, u32) = (36, 90);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub device: Device,
    pub mode: Mode,
}

/// Parses `events.csv`. Line numbers in errors are 1-based file lines, so the
/// first data row is line 2.
pub fn parse_events<R: Read>(input: R) -> Result<Vec<KeyEvent>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => IngestError::Csv(e),
            _ => IngestError::MalformedRow(line),
        })?;
        if record.len() != EVENTS_HEADER.len() {
            return Err(IngestError::MalformedRow(line));
        }
        let device = record[1].parse().map_err(|_| IngestError::InvalidEnum(line))?;
        let mode = record[2].parse().map_err(|_| IngestError::InvalidEnum(line))?;
        let key = record[3].to_string();
        if record[0].is_empty() || key.is_empty() {
            return Err(IngestError::MalformedRow(line));
        }
        let press_ms = record[4].trim().parse().map_err(|_| IngestError::MalformedRow(line))?;
        let release_ms = record[5].trim().parse().map_err(|_| IngestError::MalformedRow(line))?;
        events.push(KeyEvent {
            user_id: record[0].to_string(),
            device,
            mode,
            key,
            press_ms,
            release_ms,
        });
    }
    Ok(events)
}

pub fn write_events<W: Write>(out: W, events: &[KeyEvent]) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(EVENTS_HEADER)?;
    for e in events {
        writer.write_record([
            e.user_id.as_str(),
            e.device.as_str(),
            e.mode.as_str(),
            e.key.as_str(),
            &e.press_ms.to_string(),
            &e.release_ms.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Result of reading a label file: the accepted users and the ids of rows
/// skipped for having a blank target field.
#[derive(Debug, Clone, Default)]
pub struct LabelTable {
    pub labels: BTreeMap<String, SoftLabels>,
    pub skipped: Vec<String>,
}

pub fn parse_labels<R: Read>(input: R) -> Result<LabelTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let mut table = LabelTable::default();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => IngestError::Csv(e),
            _ => IngestError::MalformedRow(line),
        })?;
        if record.len() != LABELS_HEADER.len() || record[0].trim().is_empty() {
            return Err(IngestError::MalformedRow(line));
        }
        let user = record[0].trim().to_string();
        if !seen.insert(user.clone()) {
            return Err(IngestError::DuplicateUser(user));
        }
        if record.iter().skip(1).any(|f| f.trim().is_empty()) {
            log::warn!("labels line {line}: user {user} has a missing field, skipped");
            table.skipped.push(user);
            continue;
        }
        let gender = record[1].parse().map_err(|_| IngestError::InvalidEnum(line))?;
        let major = record[2].parse().map_err(|_| IngestError::InvalidEnum(line))?;
        let style = record[3].parse().map_err(|_| IngestError::InvalidEnum(line))?;
        let age: u32 = record[4].trim().parse().map_err(|_| IngestError::MalformedRow(line))?;
        let height: u32 = record[5].trim().parse().map_err(|_| IngestError::MalformedRow(line))?;
        if !(AGE_RANGE.0..=AGE_RANGE.1).contains(&age)
            || !(HEIGHT_RANGE.0..=HEIGHT_RANGE.1).contains(&height)
        {
            return Err(IngestError::MalformedRow(line));
        }
        table.labels.insert(user, SoftLabels { gender, major, style, age, height });
    }
    Ok(table)
}

pub fn write_labels<W: Write>(out: W, labels: &BTreeMap<String, SoftLabels>) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(LABELS_HEADER)?;
    for (user, l) in labels {
        writer.write_record([
            user.as_str(),
            l.gender.as_str(),
            l.major.as_str(),
            l.style.as_str(),
            &l.age.to_string(),
            &l.height.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Bookkeeping from [`build_dataset`]: how much of the input survived.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub input_events: usize,
    pub kept_events: usize,
    pub dropped_inverted: usize,
    pub dropped_unlabeled_events: usize,
    pub input_users: usize,
    pub kept_users: usize,
    pub dropped_users: Vec<String>,
}

/// Validated keystroke data keyed by user and session.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub streams: BTreeMap<String, BTreeMap<SessionKey, Vec<KeyEvent>>>,
    pub labels: BTreeMap<String, SoftLabels>,
    pub report: BuildReport,
}

impl Dataset {
    pub fn stream(&self, user: &str, device: Device, mode: Mode) -> Option<&[KeyEvent]> {
        self.streams
            .get(user)
            .and_then(|s| s.get(&SessionKey { device, mode }))
            .map(Vec::as_slice)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.streams.keys().map(String::as_str)
    }

    pub fn user_count(&self) -> usize {
        self.streams.len()
    }

    /// All events, grouped by user then session, in stream order.
    pub fn events(&self) -> impl Iterator<Item = &KeyEvent> {
        self.streams.values().flat_map(|s| s.values()).flatten()
    }
}

/// Groups events into sorted per-session streams, dropping inverted events
/// (release before press) and users without labels.
pub fn build_dataset(
    events: Vec<KeyEvent>,
    labels: &BTreeMap<String, SoftLabels>,
) -> Result<Dataset, IngestError> {
    let mut report = BuildReport { input_events: events.len(), ..Default::default() };
    let mut all_users = BTreeSet::new();
    let mut streams: BTreeMap<String, BTreeMap<SessionKey, Vec<KeyEvent>>> = BTreeMap::new();
    for event in events {
        all_users.insert(event.user_id.clone());
        if event.release_ms < event.press_ms {
            report.dropped_inverted += 1;
            continue;
        }
        if !labels.contains_key(&event.user_id) {
            report.dropped_unlabeled_events += 1;
            continue;
        }
        let key = SessionKey { device: event.device, mode: event.mode };
        streams
            .entry(event.user_id.clone())
            .or_default()
            .entry(key)
            .or_default()
            .push(event);
    }
    for sessions in streams.values_mut() {
        for stream in sessions.values_mut() {
            // stable: equal press times keep file order
            stream.sort_by_key(|e| e.press_ms);
        }
    }
    report.input_users = all_users.len();
    report.dropped_users = all_users
        .iter()
        .filter(|u| !streams.contains_key(*u))
        .cloned()
        .collect();
    for user in &report.dropped_users {
        if labels.contains_key(user) {
            log::warn!("user {user} has no valid events; dropped");
        } else {
            log::warn!("user {user} has no labels; dropped");
        }
    }
    report.kept_users = streams.len();
    report.kept_events = streams.values().flat_map(|s| s.values()).map(Vec::len).sum();
    if streams.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let labels = streams
        .keys()
        .map(|u| (u.clone(), labels[u]))
        .collect();
    Ok(Dataset { streams, labels, report })
}

/// Reads `events.csv` and `labels.csv` from a directory and builds the dataset.
pub fn load_dir(dir: &std::path::Path) -> Result<Dataset, crate::Error> {
    let events_path = dir.join("events.csv");
    let labels_path = dir.join("labels.csv");
    let open = |p: &std::path::Path| {
        std::fs::File::open(p).map_err(|e| crate::Error::Path(p.display().to_string(), e))
    };
    let events = parse_events(std::io::BufReader::new(open(&events_path)?))?;
    let labels = parse_labels(std::io::BufReader::new(open(&labels_path)?))?;
    Ok(build_dataset(events, &labels.labels)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl NumericSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(Self { min: sorted[0], max: sorted[n - 1], mean, median, std: var.sqrt() })
    }
}

/// Population-level description of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub users: usize,
    pub gender: BTreeMap<String, usize>,
    pub major: BTreeMap<String, usize>,
    pub style: BTreeMap<String, usize>,
    pub age: Option<NumericSummary>,
    pub height: Option<NumericSummary>,
    /// Keystrokes per `device/mode`.
    pub keystrokes: BTreeMap<String, usize>,
}

pub fn dataset_summary(dataset: &Dataset) -> Manifest {
    let mut gender = BTreeMap::new();
    let mut major = BTreeMap::new();
    let mut style = BTreeMap::new();
    for l in dataset.labels.values() {
        *gender.entry(l.gender.as_str().to_string()).or_insert(0) += 1;
        *major.entry(l.major.as_str().to_string()).or_insert(0) += 1;
        *style.entry(l.style.as_str().to_string()).or_insert(0) += 1;
    }
    let ages: Vec<f64> = dataset.labels.values().map(|l| l.age as f64).collect();
    let heights: Vec<f64> = dataset.labels.values().map(|l| l.height as f64).collect();
    let mut keystrokes = BTreeMap::new();
    for sessions in dataset.streams.values() {
        for (k, s) in sessions {
            *keystrokes.entry(format!("{}/{}", k.device, k.mode)).or_insert(0) += s.len();
        }
    }
    Manifest {
        users: dataset.labels.len(),
        gender,
        major,
        style,
        age: NumericSummary::of(&ages),
        height: NumericSummary::of(&heights),
        keystrokes,
    }
}

/// Direction of a raw key action in logs that record press and release as
/// separate rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Press,
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyAction {
    pub user_id: String,
    pub device: Device,
    pub mode: Mode,
    pub key: String,
    pub direction: Direction,
    pub time_ms: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairingReport {
    pub paired: usize,
    pub unpaired_presses: usize,
    pub orphan_releases: usize,
}

/// Converts separate press/release rows into [`KeyEvent`]s: each press is
/// paired with the next release of the same key in the same session.
/// Unpaired presses and releases without a pending press are dropped and
/// counted.
pub fn pair_actions(mut actions: Vec<KeyAction>) -> (Vec<KeyEvent>, PairingReport) {
    actions.sort_by(|a, b| {
        (&a.user_id, a.device, a.mode, a.time_ms).cmp(&(&b.user_id, b.device, b.mode, b.time_ms))
    });
    let mut report = PairingReport::default();
    let mut events = Vec::new();
    let mut pending: BTreeMap<(&str, Device, Mode, &str), std::collections::VecDeque<i64>> =
        BTreeMap::new();
    for a in &actions {
        let slot = pending
            .entry((a.user_id.as_str(), a.device, a.mode, a.key.as_str()))
            .or_default();
        match a.direction {
            Direction::Press => slot.push_back(a.time_ms),
            Direction::Release => match slot.pop_front() {
                Some(press_ms) => {
                    report.paired += 1;
                    events.push(KeyEvent {
                        user_id: a.user_id.clone(),
                        device: a.device,
                        mode: a.mode,
                        key: a.key.clone(),
                        press_ms,
                        release_ms: a.time_ms,
                    });
                }
                None => report.orphan_releases += 1,
            },
        }
    }
    report.unpaired_presses = pending.values().map(|q| q.len()).sum();
    events.sort_by(|a, b| {
        (&a.user_id, a.device, a.mode, a.press_ms).cmp(&(&b.user_id, b.device, b.mode, b.press_ms))
    });
    (events, report)
}

/// Parses raw action logs with header `user_id,device,mode,key,direction,time_ms`
/// where direction is `press` or `release`.
pub fn parse_actions<R: Read>(input: R) -> Result<Vec<KeyAction>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|_| IngestError::MalformedRow(line))?;
        if record.len() != 6 || record[3].is_empty() {
            return Err(IngestError::MalformedRow(line));
        }
        let direction = match record[4].trim().to_ascii_lowercase().as_str() {
            "press" | "down" => Direction::Press,
            "release" | "up" => Direction::Release,
            _ => return Err(IngestError::InvalidEnum(line)),
        };
        out.push(KeyAction {
            user_id: record[0].to_string(),
            device: record[1].parse().map_err(|_| IngestError::InvalidEnum(line))?,
            mode: record[2].parse().map_err(|_| IngestError::InvalidEnum(line))?,
            key: record[3].to_string(),
            direction,
            time_ms: record[5].trim().parse().map_err(|_| IngestError::MalformedRow(line))?,
        });
    }
    Ok(out)
}
