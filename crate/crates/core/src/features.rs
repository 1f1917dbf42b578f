//! Typing-rhythm features: key hold times (unigraphs), the four flight
//! times between consecutive keys (digraphs), and word-level timings.
//!
//! Raw per-occurrence values are collected into series keyed by [`SeriesId`],
//! outlier-filtered with Tukey fences, and aggregated into a fixed-length
//! vector whose layout is decided by a [`FeatureVocabulary`] fitted on
//! training users only.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Device, KeyEvent, Mode};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("empty input")]
    EmptyInput,
    #[error("stream has {0} events; at least 2 are needed for digraphs")]
    TooShort(usize),
    #[error("no training streams to fit a vocabulary on")]
    EmptyTraining,
    #[error("missing {0} vector for combined features")]
    MissingDevice(Device),
    #[error("vectors to combine disagree on {0}")]
    Inconsistent(&'static str),
}

/// Tukey fence multiplier.
pub const DEFAULT_IQR_K: f64 = 1.5;

/// Quantile by linear interpolation at index `(n - 1) * p` of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// First and third quartiles of `values` (any order).
pub fn quartiles(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75))
}

fn fence_pass(values: &[f64], k: f64) -> Vec<f64> {
    let (q1, q3) = quartiles(values);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);
    values.iter().copied().filter(|v| *v >= lo && *v <= hi).collect()
}

/// Removes values outside `[Q1 - k·IQR, Q3 + k·IQR]`, recomputing the fences
/// on the survivors until nothing more is removed. The result is therefore
/// a fixed point: filtering it again returns it unchanged. Survivors keep
/// their original order.
pub fn iqr_filter(values: &[f64], k: f64) -> Result<Vec<f64>, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let mut current = values.to_vec();
    loop {
        let next = fence_pass(&current, k);
        if next.len() == current.len() {
            return Ok(current);
        }
        current = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stat {
    Mean,
    Median,
    Std,
}

impl Stat {
    pub const ALL: [Stat; 3] = [Stat::Mean, Stat::Median, Stat::Std];

    pub fn as_str(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Median => "median",
            Stat::Std => "std",
        }
    }

    /// Applies the statistic; `std` is the population standard deviation.
    pub fn apply(self, values: &[f64]) -> f64 {
        debug_assert!(!values.is_empty());
        let n = values.len() as f64;
        match self {
            Stat::Mean => values.iter().sum::<f64>() / n,
            Stat::Median => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let m = sorted.len() / 2;
                if sorted.len() % 2 == 1 {
                    sorted[m]
                } else {
                    0.5 * (sorted[m - 1] + sorted[m])
                }
            }
            Stat::Std => {
                // shifted sums: exact numerator for integer-ms data
                let c = values[0];
                let (s, s2) = values.iter().fold((0.0, 0.0), |(s, s2), v| (s + (v - c), s2 + (v - c) * (v - c)));
                ((n * s2 - s * s).max(0.0) / (n * n)).sqrt()
            }
        }
    }
}

/// The four flight times between consecutive keys `k_i`, `k_{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flight {
    /// press(k_{i+1}) - release(k_i)
    F1,
    /// release(k_{i+1}) - release(k_i)
    F2,
    /// press(k_{i+1}) - press(k_i)
    F3,
    /// release(k_{i+1}) - press(k_i)
    F4,
}

impl Flight {
    pub const ALL: [Flight; 4] = [Flight::F1, Flight::F2, Flight::F3, Flight::F4];

    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn of(self, first: &KeyEvent, second: &KeyEvent) -> f64 {
        let v = match self {
            Flight::F1 => second.press_ms - first.release_ms,
            Flight::F2 => second.release_ms - first.release_ms,
            Flight::F3 => second.press_ms - first.press_ms,
            Flight::F4 => second.release_ms - first.press_ms,
        };
        v as f64
    }
}

impl fmt::Display for Flight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.index())
    }
}

/// Hold time of every key, grouped by key label, in stream order.
pub fn unigraph_holds(stream: &[KeyEvent]) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in stream {
        out.entry(e.key.clone()).or_default().push(e.hold_ms() as f64);
    }
    out
}

pub type DigraphKey = (String, String, Flight);

/// Flight times of every adjacent pair in the stream, per key pair and flight.
pub fn digraph_flights(stream: &[KeyEvent]) -> Result<BTreeMap<DigraphKey, Vec<f64>>, FeatureError> {
    if stream.len() < 2 {
        return Err(FeatureError::TooShort(stream.len()));
    }
    let mut out: BTreeMap<DigraphKey, Vec<f64>> = BTreeMap::new();
    for pair in stream.windows(2) {
        for flight in Flight::ALL {
            out.entry((pair[0].key.clone(), pair[1].key.clone(), flight))
                .or_default()
                .push(flight.of(&pair[0], &pair[1]));
        }
    }
    Ok(out)
}

/// A maximal run of letter keys of length at least two.
#[derive(Debug, Clone, PartialEq)]
pub struct WordInstance<'a> {
    pub text: String,
    pub events: &'a [KeyEvent],
}

pub fn is_letter_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_ascii_alphabetic())
}

/// Splits a stream into words at every non-letter key (space, punctuation,
/// modifiers, digits, backspace). Single-letter runs are not words.
pub fn segment_words(stream: &[KeyEvent]) -> Vec<WordInstance<'_>> {
    let mut words = Vec::new();
    let mut start = 0;
    for i in 0..=stream.len() {
        let boundary = i == stream.len() || !is_letter_key(&stream[i].key);
        if boundary {
            if i - start >= 2 {
                let events = &stream[start..i];
                let text = events.iter().map(|e| e.key.to_ascii_lowercase()).collect();
                words.push(WordInstance { text, events });
            }
            start = i + 1;
        }
    }
    words
}

/// Release of the last key minus press of the first key.
pub fn word_hold_time(word: &WordInstance<'_>) -> f64 {
    let first = &word.events[0];
    let last = &word.events[word.events.len() - 1];
    (last.release_ms - first.press_ms) as f64
}

pub fn word_unigraph_stat(word: &WordInstance<'_>, stat: Stat) -> f64 {
    let holds: Vec<f64> = word.events.iter().map(|e| e.hold_ms() as f64).collect();
    stat.apply(&holds)
}

pub fn word_digraph_stat(word: &WordInstance<'_>, flight: Flight, stat: Stat) -> f64 {
    let flights: Vec<f64> = word.events.windows(2).map(|p| flight.of(&p[0], &p[1])).collect();
    stat.apply(&flights)
}

/// Identity of one occurrence series.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeriesId {
    Unigraph(String),
    Digraph(String, String, Flight),
    WordHold(String),
    WordUniStat(String, Stat),
    WordDiStat(String, Flight, Stat),
}

/// Every occurrence series present in one stream.
#[derive(Debug, Clone, Default)]
pub struct StreamSeries {
    pub series: BTreeMap<SeriesId, Vec<f64>>,
}

impl StreamSeries {
    pub fn extract(stream: &[KeyEvent]) -> Self {
        let mut series: BTreeMap<SeriesId, Vec<f64>> = BTreeMap::new();
        for (key, holds) in unigraph_holds(stream) {
            series.insert(SeriesId::Unigraph(key), holds);
        }
        if let Ok(flights) = digraph_flights(stream) {
            for ((a, b, f), values) in flights {
                series.insert(SeriesId::Digraph(a, b, f), values);
            }
        }
        for word in segment_words(stream) {
            let w = &word.text;
            series.entry(SeriesId::WordHold(w.clone())).or_default().push(word_hold_time(&word));
            for stat in Stat::ALL {
                series
                    .entry(SeriesId::WordUniStat(w.clone(), stat))
                    .or_default()
                    .push(word_unigraph_stat(&word, stat));
                for flight in Flight::ALL {
                    series
                        .entry(SeriesId::WordDiStat(w.clone(), flight, stat))
                        .or_default()
                        .push(word_digraph_stat(&word, flight, stat));
                }
            }
        }
        Self { series }
    }

    pub fn get(&self, id: &SeriesId) -> Option<&[f64]> {
        self.series.get(id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceConfig {
    Desktop,
    Phone,
    Tablet,
    Combined,
}

impl DeviceConfig {
    pub const ALL: [DeviceConfig; 4] =
        [DeviceConfig::Desktop, DeviceConfig::Phone, DeviceConfig::Tablet, DeviceConfig::Combined];

    pub fn devices(self) -> &'static [Device] {
        match self {
            DeviceConfig::Desktop => &[Device::Desktop],
            DeviceConfig::Phone => &[Device::Phone],
            DeviceConfig::Tablet => &[Device::Tablet],
            DeviceConfig::Combined => &Device::ALL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceConfig::Desktop => "desktop",
            DeviceConfig::Phone => "phone",
            DeviceConfig::Tablet => "tablet",
            DeviceConfig::Combined => "combined",
        }
    }
}

impl From<Device> for DeviceConfig {
    fn from(d: Device) -> Self {
        match d {
            Device::Desktop => DeviceConfig::Desktop,
            Device::Phone => DeviceConfig::Phone,
            Device::Tablet => DeviceConfig::Tablet,
        }
    }
}

impl fmt::Display for DeviceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DeviceConfig {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "desktop" => Ok(Self::Desktop),
            "phone" => Ok(Self::Phone),
            "tablet" => Ok(Self::Tablet),
            "combined" => Ok(Self::Combined),
            other => Err(format!("unknown device config `{other}`")),
        }
    }
}

/// One column of a feature vector: a series and how it is aggregated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Descriptor {
    pub series: SeriesId,
    pub aggregate: Stat,
}

impl Descriptor {
    /// Stable column name, e.g. `uni:a:mean`, `di:t+h:F1:std`,
    /// `word:the:WN:median`, `word:the:WF2:std`.
    pub fn name(&self) -> String {
        let agg = self.aggregate.as_str();
        match &self.series {
            SeriesId::Unigraph(k) => format!("uni:{k}:{agg}"),
            SeriesId::Digraph(a, b, f) => format!("di:{a}+{b}:{f}:{agg}"),
            SeriesId::WordHold(w) => format!("word:{w}:WN:{agg}"),
            SeriesId::WordUniStat(w, s) => format!("word:{w}:WK:{}", s.as_str()),
            SeriesId::WordDiStat(w, f, s) => format!("word:{w}:W{f}:{}", s.as_str()),
        }
    }
}

/// Caps on how many units of each family enter the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularyCaps {
    pub unigraphs: usize,
    pub digraphs: usize,
    pub words: usize,
    /// Units seen fewer times than this across training streams are ignored.
    #[serde(default = "default_floor")]
    pub frequency_floor: usize,
}

fn default_floor() -> usize {
    1
}

impl Default for VocabularyCaps {
    fn default() -> Self {
        Self { unigraphs: 40, digraphs: 200, words: 100, frequency_floor: 1 }
    }
}

/// Fixed feature layout for one (device, mode) session type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    pub device: Device,
    pub mode: Mode,
    pub descriptors: Vec<Descriptor>,
    pub fitted_on: Vec<String>,
    pub caps: VocabularyCaps,
}

impl FeatureVocabulary {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        let prefix = self.device.as_str();
        self.descriptors.iter().map(|d| format!("{prefix}:{}", d.name())).collect()
    }
}

fn top_units<K: Ord + Clone>(counts: BTreeMap<K, usize>, cap: usize, floor: usize) -> Vec<K> {
    let mut ranked: Vec<(K, usize)> = counts.into_iter().filter(|(_, c)| *c >= floor).collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps that
    // order within equal counts.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.into_iter().take(cap).map(|(k, _)| k).collect()
}

/// Chooses the most frequent units across the given training streams.
///
/// Each selected key and (pair, flight) unit contributes mean, median and std
/// descriptors. Each selected word contributes mean/median/std of its hold
/// time plus the mean over instances of its three unigraph statistics and
/// its twelve digraph statistics, 18 columns in total.
pub fn fit_vocabulary<'a, I>(
    device: Device,
    mode: Mode,
    training: I,
    caps: VocabularyCaps,
) -> Result<FeatureVocabulary, FeatureError>
where
    I: IntoIterator<Item = (&'a str, &'a [KeyEvent])>,
{
    let mut fitted_on = Vec::new();
    let mut uni: BTreeMap<String, usize> = BTreeMap::new();
    let mut di: BTreeMap<DigraphKey, usize> = BTreeMap::new();
    let mut words: BTreeMap<String, usize> = BTreeMap::new();
    for (user, stream) in training {
        fitted_on.push(user.to_string());
        for e in stream {
            *uni.entry(e.key.clone()).or_default() += 1;
        }
        for pair in stream.windows(2) {
            for f in Flight::ALL {
                *di.entry((pair[0].key.clone(), pair[1].key.clone(), f)).or_default() += 1;
            }
        }
        for w in segment_words(stream) {
            *words.entry(w.text).or_default() += 1;
        }
    }
    if fitted_on.is_empty() {
        return Err(FeatureError::EmptyTraining);
    }
    fitted_on.sort();
    let floor = caps.frequency_floor;
    let mut descriptors = Vec::new();
    let per_stat = |series: SeriesId, out: &mut Vec<Descriptor>| {
        for aggregate in Stat::ALL {
            out.push(Descriptor { series: series.clone(), aggregate });
        }
    };
    for key in top_units(uni, caps.unigraphs, floor) {
        per_stat(SeriesId::Unigraph(key), &mut descriptors);
    }
    for (a, b, f) in top_units(di, caps.digraphs, floor) {
        per_stat(SeriesId::Digraph(a, b, f), &mut descriptors);
    }
    for w in top_units(words, caps.words, floor) {
        per_stat(SeriesId::WordHold(w.clone()), &mut descriptors);
        for stat in Stat::ALL {
            descriptors.push(Descriptor {
                series: SeriesId::WordUniStat(w.clone(), stat),
                aggregate: Stat::Mean,
            });
        }
        for f in Flight::ALL {
            for stat in Stat::ALL {
                descriptors.push(Descriptor {
                    series: SeriesId::WordDiStat(w.clone(), f, stat),
                    aggregate: Stat::Mean,
                });
            }
        }
    }
    Ok(FeatureVocabulary { device, mode, descriptors, fitted_on, caps })
}

/// Fixed-length features of one user under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub user_id: String,
    pub device_config: DeviceConfig,
    pub mode: Mode,
    /// Masked entries hold 0.0 until imputation.
    pub values: Vec<f64>,
    pub missing_mask: Vec<bool>,
}

pub fn aggregate_series(values: &[f64], stat: Stat) -> f64 {
    // non-empty by construction, so the filter always succeeds
    let kept = iqr_filter(values, DEFAULT_IQR_K).expect("non-empty series");
    stat.apply(&kept)
}

pub fn vectorize(user_id: &str, stream: &[KeyEvent], vocab: &FeatureVocabulary) -> FeatureVector {
    vectorize_series(user_id, &StreamSeries::extract(stream), vocab)
}

/// As [`vectorize`], from series already extracted from the stream.
pub fn vectorize_series(user_id: &str, series: &StreamSeries, vocab: &FeatureVocabulary) -> FeatureVector {
    let mut values = Vec::with_capacity(vocab.len());
    let mut missing_mask = Vec::with_capacity(vocab.len());
    for d in &vocab.descriptors {
        match series.get(&d.series) {
            Some(v) if !v.is_empty() => {
                values.push(aggregate_series(v, d.aggregate));
                missing_mask.push(false);
            }
            _ => {
                values.push(0.0);
                missing_mask.push(true);
            }
        }
    }
    FeatureVector {
        user_id: user_id.to_string(),
        device_config: vocab.device.into(),
        mode: vocab.mode,
        values,
        missing_mask,
    }
}

/// Every descriptor value a stream can supply, aggregated once so that
/// vectorizing under many vocabularies is a lookup.
#[derive(Debug, Clone, Default)]
pub struct AggregatedStream {
    values: HashMap<SeriesId, [f64; 3]>,
}

impl AggregatedStream {
    pub fn new(series: &StreamSeries) -> Self {
        let values = series
            .series
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(id, v)| {
                let kept = iqr_filter(v, DEFAULT_IQR_K).expect("non-empty series");
                (id.clone(), Stat::ALL.map(|s| s.apply(&kept)))
            })
            .collect();
        Self { values }
    }

    pub fn get(&self, d: &Descriptor) -> Option<f64> {
        self.values.get(&d.series).map(|v| v[d.aggregate as usize])
    }
}

/// As [`vectorize_series`], reading precomputed aggregates.
pub fn vectorize_aggregated(user_id: &str, agg: &AggregatedStream, vocab: &FeatureVocabulary) -> FeatureVector {
    let (values, missing_mask) = vocab
        .descriptors
        .iter()
        .map(|d| match agg.get(d) {
            Some(v) => (v, false),
            None => (0.0, true),
        })
        .unzip();
    FeatureVector { user_id: user_id.to_string(), device_config: vocab.device.into(), mode: vocab.mode, values, missing_mask }
}

/// Concatenates per-device vectors in Desktop, Phone, Tablet order.
pub fn combine_devices(per_device: &BTreeMap<Device, FeatureVector>) -> Result<FeatureVector, FeatureError> {
    let mut values = Vec::new();
    let mut missing_mask = Vec::new();
    let mut ident: Option<(&str, Mode)> = None;
    for device in Device::ALL {
        let v = per_device.get(&device).ok_or(FeatureError::MissingDevice(device))?;
        match ident {
            None => ident = Some((&v.user_id, v.mode)),
            Some((u, m)) => {
                if u != v.user_id {
                    return Err(FeatureError::Inconsistent("user"));
                }
                if m != v.mode {
                    return Err(FeatureError::Inconsistent("mode"));
                }
            }
        }
        values.extend_from_slice(&v.values);
        missing_mask.extend_from_slice(&v.missing_mask);
    }
    let (user, mode) = ident.expect("three devices present");
    Ok(FeatureVector {
        user_id: user.to_string(),
        device_config: DeviceConfig::Combined,
        mode,
        values,
        missing_mask,
    })
}

/// Writes feature values as CSV: `user_id` then one column per descriptor.
pub fn write_feature_csv<W: Write>(out: W, names: &[String], vectors: &[FeatureVector]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("user_id").chain(names.iter().map(String::as_str)))?;
    for v in vectors {
        let mut row = vec![v.user_id.clone()];
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the 0/1 missing-mask companion of [`write_feature_csv`].
pub fn write_mask_csv<W: Write>(out: W, names: &[String], vectors: &[FeatureVector]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("user_id").chain(names.iter().map(String::as_str)))?;
    for v in vectors {
        let mut row = vec![v.user_id.clone()];
        row.extend(v.missing_mask.iter().map(|m| if *m { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(key: &str, press: i64, release: i64) -> KeyEvent {
        KeyEvent {
            user_id: "u".into(),
            device: Device::Desktop,
            mode: Mode::Free,
            key: key.into(),
            press_ms: press,
            release_ms: release,
        }
    }

    fn typed(keys: &[&str]) -> Vec<KeyEvent> {
        keys.iter().enumerate().map(|(i, key)| k(key, 100 * i as i64, 100 * i as i64 + 50)).collect()
    }

    #[test]
    fn iqr_drops_far_outlier() {
        assert_eq!(iqr_filter(&[10., 12., 14., 16., 100.], 1.5).unwrap(), vec![10., 12., 14., 16.]);
    }

    #[test]
    fn iqr_keeps_constant_and_single() {
        assert_eq!(iqr_filter(&[5.; 4], 1.5).unwrap(), vec![5.; 4]);
        assert_eq!(iqr_filter(&[42.], 1.5).unwrap(), vec![42.]);
        assert_eq!(iqr_filter(&[], 1.5), Err(FeatureError::EmptyInput));
    }

    #[test]
    fn iqr_preserves_order() {
        assert_eq!(iqr_filter(&[16., 1000., 10., 14., 12.], 1.5).unwrap(), vec![16., 10., 14., 12.]);
    }

    #[test]
    fn quartiles_interpolate() {
        // index 1.0 and 3.0 of five values
        assert_eq!(quartiles(&[100., 10., 16., 12., 14.]), (12., 16.));
        // (n-1)p = 0.75 and 2.25
        assert_eq!(quartiles(&[1., 2., 3., 4.]), (1.75, 3.25));
    }

    #[test]
    fn unigraph_basics() {
        assert_eq!(unigraph_holds(&[k("a", 100, 180)])["a"], vec![80.]);
        assert!(unigraph_holds(&[]).is_empty());
        let fifty: Vec<_> = (0..50).map(|i| k("k", i * 10, i * 10 + 5)).collect();
        assert_eq!(unigraph_holds(&fifty)["k"].len(), 50);
    }

    #[test]
    fn digraph_formulas() {
        let d = digraph_flights(&[k("a", 0, 80), k("b", 120, 210)]).unwrap();
        let get = |f| d[&("a".to_string(), "b".to_string(), f)][0];
        assert_eq!([get(Flight::F1), get(Flight::F2), get(Flight::F3), get(Flight::F4)], [40., 130., 120., 210.]);
    }

    #[test]
    fn digraph_overlap_is_negative() {
        let d = digraph_flights(&[k("a", 0, 80), k("b", 60, 210)]).unwrap();
        assert_eq!(d[&("a".into(), "b".into(), Flight::F1)], vec![-20.]);
    }

    #[test]
    fn digraph_counts_and_short_streams() {
        let d = digraph_flights(&typed(&["a", "b", "c"])).unwrap();
        for f in Flight::ALL {
            let n: usize = d.iter().filter(|((_, _, g), _)| *g == f).map(|(_, v)| v.len()).sum();
            assert_eq!(n, 2);
        }
        assert_eq!(digraph_flights(&typed(&["a"])), Err(FeatureError::TooShort(1)));
    }

    #[test]
    fn words_split_on_delimiters() {
        let s = typed(&["t", "h", "e", "Space", "c", "a", "t"]);
        let words: Vec<_> = segment_words(&s).into_iter().map(|w| w.text).collect();
        assert_eq!(words, ["the", "cat"]);
        assert!(segment_words(&typed(&["a", "Space", "b"])).is_empty());
        let s = typed(&["c", "a", "Backspace", "t"]);
        let words: Vec<_> = segment_words(&s).into_iter().map(|w| w.text).collect();
        assert_eq!(words, ["ca"]);
    }

    #[test]
    fn words_are_lowercased() {
        let s = typed(&["Shift", "H", "i"]);
        assert_eq!(segment_words(&s)[0].text, "hi");
    }

    #[test]
    fn word_hold_uses_last_event_release() {
        let s = [k("h", 0, 70), k("i", 90, 160)];
        assert_eq!(word_hold_time(&segment_words(&s)[0]), 160.);
        // h is released after i, but the last key in sequence is i
        let s = [k("h", 0, 200), k("i", 90, 160)];
        assert_eq!(word_hold_time(&segment_words(&s)[0]), 160.);
    }

    #[test]
    fn word_stats() {
        let s = [k("h", 0, 80), k("i", 100, 160)];
        let w = &segment_words(&s)[0];
        assert_eq!(word_unigraph_stat(w, Stat::Mean), 70.);
        assert_eq!(word_unigraph_stat(w, Stat::Std), 10.);
        assert_eq!(word_digraph_stat(w, Flight::F1, Stat::Mean), 20.);
        assert_eq!(word_digraph_stat(w, Flight::F1, Stat::Std), 0.);
        assert_eq!(word_digraph_stat(w, Flight::F1, Stat::Median), 20.);

        let s = [k("a", 0, 50), k("b", 100, 170), k("c", 200, 290)];
        assert_eq!(word_unigraph_stat(&segment_words(&s)[0], Stat::Median), 70.);
        let s = [k("t", 0, 50), k("h", 120, 170), k("e", 210, 290)];
        assert_eq!(word_digraph_stat(&segment_words(&s)[0], Flight::F3, Stat::Median), 105.);
    }

    fn toy_corpus() -> Vec<KeyEvent> {
        // t h e Space t h e Space a n
        let keys = ["t", "h", "e", "Space", "t", "h", "e", "Space", "a", "n"];
        keys.iter()
            .enumerate()
            .map(|(i, key)| k(key, 100 * i as i64, 100 * i as i64 + 60 + i as i64))
            .collect()
    }

    #[test]
    fn vocabulary_descriptor_count() {
        let s = toy_corpus();
        let caps = VocabularyCaps { unigraphs: 2, digraphs: 2, words: 1, frequency_floor: 1 };
        let v = fit_vocabulary(Device::Desktop, Mode::Free, [("u1", s.as_slice())], caps).unwrap();
        // 2 keys x 3 + 2 digraph units x 3 + one word x (3 + 3 + 12)
        assert_eq!(v.len(), 3 * 2 + 3 * 2 + 18);
        // key counts: t,h,e,Space = 2 each; lexicographic tie-break: "Space" < "e"
        assert_eq!(v.descriptors[0].series, SeriesId::Unigraph("Space".into()));
        assert_eq!(v.descriptors[3].series, SeriesId::Unigraph("e".into()));
        // (e,Space), (h,e) and (t,h) each occur twice; (e,Space) sorts first
        assert_eq!(v.descriptors[6].series, SeriesId::Digraph("e".into(), "Space".into(), Flight::F1));
        assert_eq!(v.descriptors[9].series, SeriesId::Digraph("e".into(), "Space".into(), Flight::F2));
        assert_eq!(v.descriptors[12].series, SeriesId::WordHold("the".into()));
        let again = fit_vocabulary(Device::Desktop, Mode::Free, [("u1", s.as_slice())], caps).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn vocabulary_ignores_units_outside_training() {
        let train = typed(&["a", "b"]);
        let v = fit_vocabulary(Device::Desktop, Mode::Free, [("u1", train.as_slice())], VocabularyCaps::default())
            .unwrap();
        assert!(!v.descriptors.iter().any(|d| d.series == SeriesId::Unigraph("z".into())));
        assert_eq!(v.fitted_on, vec!["u1".to_string()]);
        let none: [(&str, &[KeyEvent]); 0] = [];
        assert_eq!(
            fit_vocabulary(Device::Desktop, Mode::Free, none, VocabularyCaps::default()),
            Err(FeatureError::EmptyTraining)
        );
    }

    #[test]
    fn vectorize_aggregates_and_masks() {
        let train = typed(&["a", "b"]);
        let v = fit_vocabulary(Device::Desktop, Mode::Free, [("u1", train.as_slice())], VocabularyCaps::default())
            .unwrap();
        let s = [k("a", 0, 10), k("a", 100, 120), k("a", 200, 230), k("a", 300, 340)];
        let fv = vectorize("u2", &s, &v);
        let col = |name: &str| v.descriptors.iter().position(|d| d.name() == name).unwrap();
        assert_eq!(fv.values[col("uni:a:mean")], 25.);
        assert!(fv.missing_mask[col("uni:b:mean")]);
        assert_eq!(fv, vectorize("u2", &s, &v));
    }

    #[test]
    fn cached_aggregates_match_direct_vectorization() {
        let sentence = |text: &str| -> Vec<KeyEvent> {
            text.chars()
                .enumerate()
                .map(|(i, c)| {
                    let key = if c == ' ' { "space".to_string() } else { c.to_string() };
                    let press = 100 * i as i64 + (i as i64 * 37) % 23;
                    k(&key, press, press + 40 + (i as i64 * 13) % 17)
                })
                .collect()
        };
        let train = sentence("the cat sat on the mat then the cat ran");
        let v = fit_vocabulary(Device::Desktop, Mode::Free, [("u1", train.as_slice())], VocabularyCaps::default())
            .unwrap();
        let probe = sentence("the cat at the hat and the cat");
        let series = StreamSeries::extract(&probe);
        let direct = vectorize_series("u2", &series, &v);
        let cached = vectorize_aggregated("u2", &AggregatedStream::new(&series), &v);
        assert_eq!(direct, cached);
        assert!(direct.missing_mask.iter().any(|m| *m));
        assert!(direct.missing_mask.iter().any(|m| !*m));
    }

    #[test]
    fn combine_concatenates_in_device_order() {
        let mk = |off: f64, mask_at: Option<usize>| FeatureVector {
            user_id: "u".into(),
            device_config: DeviceConfig::Desktop,
            mode: Mode::Free,
            values: (0..10).map(|i| off + i as f64).collect(),
            missing_mask: (0..10).map(|i| Some(i) == mask_at).collect(),
        };
        let mut m = BTreeMap::new();
        m.insert(Device::Tablet, mk(200., None));
        m.insert(Device::Desktop, mk(0., None));
        m.insert(Device::Phone, mk(100., Some(3)));
        let c = combine_devices(&m).unwrap();
        assert_eq!(c.values.len(), 30);
        assert_eq!(c.values[10], 100.);
        assert!(c.missing_mask[13]);
        assert_eq!(c.missing_mask.iter().filter(|m| **m).count(), 1);
        m.remove(&Device::Tablet);
        assert_eq!(combine_devices(&m), Err(FeatureError::MissingDevice(Device::Tablet)));
    }

    #[test]
    fn descriptor_names() {
        let d = Descriptor { series: SeriesId::Digraph("t".into(), "h".into(), Flight::F1), aggregate: Stat::Std };
        assert_eq!(d.name(), "di:t+h:F1:std");
        let d = Descriptor { series: SeriesId::WordHold("the".into()), aggregate: Stat::Mean };
        assert_eq!(d.name(), "word:the:WN:mean");
    }
}
