//! Evaluation harness: user-disjoint train/test split, k-fold grid search on
//! the training users, refit, held-out scoring, and the full result matrix.
//!
//! Everything fitted (vocabulary, standardizer, selector, oversampler,
//! model) sees fit users only, and every fit is logged in the provenance so
//! that can be audited after the fact.

mod matrix;
pub mod reference;

pub use matrix::{
    full_matrix, leakage_audit, render_csv, render_markdown, write_results, CellKey, CellOutcome, Failure,
    MatrixOutput, MatrixPlan, OutputFormat, ResultTable,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    combine_devices, fit_vocabulary, vectorize_aggregated, AggregatedStream, DeviceConfig, FeatureError,
    FeatureVector, StreamSeries, VocabularyCaps,
};
use crate::ingest::{Dataset, Device, Gender, Major, Mode, SoftLabels, TypingStyle};
use crate::ml::{self, Algorithm, MlError, ModelSpec, TaskKind, Targets, TrainedModel};
use crate::neural::{
    build_architecture, train_network, ArchKind, ArchOptions, Head, NeuralError, Target, TrainConfig, TrainedNetwork,
};
use crate::preprocess::{
    borderline_smote, quartile_classes, MiSelector, PreprocessError, SelectionTarget, SmoteConfig, Standardizer,
    DEFAULT_MI_BINS,
};
use crate::synth::stable_hash;

/// Column order of the published classification tables.
pub const CLASSIFIER_COLUMNS: [&str; 10] =
    ["NaiveBayes", "SVM", "DecisionTree", "AdaBoost", "MLP", "XGBoost", "RNN", "LSTM", "FC", "CNN"];
/// Column order of the published regression table.
pub const REGRESSOR_COLUMNS: [&str; 7] = ["SVM", "KNN", "XGBoost", "RNN", "LSTM", "FC", "CNN"];

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("class {class} has {count} user(s); stratified splitting needs at least 2")]
    StratumTooSmall { class: String, count: usize },
    #[error("{users} users cannot be split {k} ways")]
    TooFewUsers { users: usize, k: usize },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("{0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("{model} cannot be used for {task}")]
    Incompatible { model: String, task: Task },
    #[error("no grid point trained successfully; first failure: {first}")]
    NoViableGridPoint { first: String, numeric: bool },
    #[error("no users with a {0} stream")]
    MissingStreams(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl ProtocolError {
    /// Failures of the numerics rather than of the data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ProtocolError::Neural(NeuralError::NonFiniteActivation { .. } | NeuralError::Divergence { .. })
                | ProtocolError::NoViableGridPoint { numeric: true, .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gender,
    Major,
    Style,
    Age,
    Height,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Gender, Task::Major, Task::Style, Task::Age, Task::Height];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Major => "major",
            Task::Style => "style",
            Task::Age => "age",
            Task::Height => "height",
        }
    }

    pub fn kind(self) -> TaskKind {
        match self {
            Task::Age | Task::Height => TaskKind::Regress,
            _ => TaskKind::Classify,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self.kind() {
            TaskKind::Classify => "accuracy",
            TaskKind::Regress => "MAE",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Gender | Task::Major => 2,
            Task::Style => 3,
            Task::Age | Task::Height => 0,
        }
    }

    pub fn class_name(self, class: usize) -> String {
        match self {
            Task::Gender => [Gender::Male, Gender::Female][class].as_str().into(),
            Task::Major => [Major::Cs, Major::NonCs][class].as_str().into(),
            Task::Style => [TypingStyle::MustLook, TypingStyle::OccasionalLook, TypingStyle::NoLook][class]
                .as_str()
                .into(),
            Task::Age | Task::Height => format!("q{}", class + 1),
        }
    }

    pub fn class_of(self, l: &SoftLabels) -> usize {
        match self {
            Task::Gender => l.gender as usize,
            Task::Major => l.major as usize,
            Task::Style => l.style as usize,
            Task::Age | Task::Height => 0,
        }
    }

    pub fn value_of(self, l: &SoftLabels) -> f64 {
        match self {
            Task::Age => f64::from(l.age),
            Task::Height => f64::from(l.height),
            _ => self.class_of(l) as f64,
        }
    }

    /// Published values for this task, by (device config, mode) row and column name.
    pub fn reference(self, dc: DeviceConfig, mode: Mode, model: &str) -> Option<f64> {
        let row = DeviceConfig::ALL.iter().position(|d| *d == dc)? * 2 + Mode::ALL.iter().position(|m| *m == mode)?;
        let col = |cols: &[&str]| cols.iter().position(|c| *c == model);
        match self {
            Task::Gender => Some(reference::GENDER[row][col(&CLASSIFIER_COLUMNS)?]),
            Task::Major => Some(reference::MAJOR[row][col(&CLASSIFIER_COLUMNS)?]),
            Task::Style => Some(reference::STYLE[row][col(&CLASSIFIER_COLUMNS)?]),
            Task::Age => Some(reference::AGE[row][col(&REGRESSOR_COLUMNS)?]),
            Task::Height => Some(reference::HEIGHT[row][col(&REGRESSOR_COLUMNS)?]),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

/// A learner: one of the classical algorithms or a neural architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Classical(Algorithm),
    Neural(ArchKind),
}

impl ModelKind {
    pub const ALL: [ModelKind; 11] = [
        ModelKind::Classical(Algorithm::NaiveBayes),
        ModelKind::Classical(Algorithm::LinearSvm),
        ModelKind::Classical(Algorithm::DecisionTree),
        ModelKind::Classical(Algorithm::AdaBoost),
        ModelKind::Classical(Algorithm::Mlp1),
        ModelKind::Classical(Algorithm::Gbt),
        ModelKind::Classical(Algorithm::Knn),
        ModelKind::Neural(ArchKind::Rnn),
        ModelKind::Neural(ArchKind::Lstm),
        ModelKind::Neural(ArchKind::Fc),
        ModelKind::Neural(ArchKind::Cnn),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Classical(a) => a.name(),
            ModelKind::Neural(a) => a.as_str(),
        }
    }

    pub fn supports(self, task: Task) -> bool {
        match self {
            ModelKind::Classical(a) => a.supports(task.kind()),
            ModelKind::Neural(_) => true,
        }
    }

    /// The published column set for a task.
    pub fn defaults_for(task: Task) -> Vec<ModelKind> {
        let cols: &[&str] = match task.kind() {
            TaskKind::Classify => &CLASSIFIER_COLUMNS,
            TaskKind::Regress => &REGRESSOR_COLUMNS,
        };
        cols.iter().map(|c| c.parse().expect("known column")).collect()
    }

    /// Hyperparameter grid searched by default.
    pub fn default_grid(self, task: TaskKind) -> Vec<BTreeMap<String, f64>> {
        match self {
            ModelKind::Classical(a) => ml::default_grid(a, task),
            ModelKind::Neural(_) => ml::cartesian(&[("lr", vec![1e-3, 1e-2])]),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let alias = match s.to_ascii_lowercase().as_str() {
            "nb" | "naive_bayes" => "NaiveBayes",
            "dt" | "tree" | "cart" => "DecisionTree",
            "linearsvm" | "svr" => "SVM",
            "mlp1" => "MLP",
            "gbt" => "XGBoost",
            _ => s,
        }
        .to_string();
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(&alias))
            .ok_or_else(|| format!("unknown model '{s}'"))
    }
}

impl Serialize for ModelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub type Params = BTreeMap<String, f64>;

/// Settings shared by every experiment in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSettings {
    pub folds: usize,
    pub caps: VocabularyCaps,
    pub mi_bins: usize,
    pub smote_k: usize,
    pub smote_m: usize,
    pub neural_epochs: usize,
    pub neural_batch_size: usize,
    pub strict_reshape: bool,
    /// Grid overrides by model name.
    pub grids: BTreeMap<String, Vec<Params>>,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self {
            folds: 5,
            caps: VocabularyCaps::default(),
            mi_bins: DEFAULT_MI_BINS,
            smote_k: 5,
            smote_m: 10,
            neural_epochs: 30,
            neural_batch_size: 16,
            strict_reshape: false,
            grids: BTreeMap::new(),
        }
    }
}

impl ProtocolSettings {
    pub fn grid_for(&self, model: ModelKind, task: Task) -> Vec<Params> {
        match self.grids.get(model.name()) {
            Some(g) => g.clone(),
            None => model.default_grid(task.kind()),
        }
    }
}

/// One cell of the result matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub device_config: DeviceConfig,
    pub mode: Mode,
    pub model: ModelKind,
    pub grid: Vec<Params>,
    pub selector_k: Vec<usize>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !self.model.supports(self.task) {
            return Err(ProtocolError::Incompatible { model: self.model.name().into(), task: self.task });
        }
        if self.grid.is_empty() || self.selector_k.is_empty() {
            return Err(ProtocolError::EmptyGrid);
        }
        Ok(())
    }
}

/// Train/test partition of users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
    pub ratio: f64,
    pub stratify_by: Task,
}

pub const TRAIN_RATIO: f64 = 0.7;
/// Selector sizes tried when a run does not name its own.
pub const DEFAULT_SELECTOR_K: [usize; 4] = [16, 32, 64, 128];

/// Per-stratum train counts: `floor(0.7·n)` but at least 1, then the
/// shortfall against `floor(0.7·N)` goes to the largest fractional parts
/// (ties to the lower stratum), never taking the last user of a stratum.
pub fn stratum_train_counts(sizes: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = total * 7 / 10;
    let mut counts: Vec<usize> = sizes.iter().map(|&n| (n * 7 / 10).max(1).min(n.saturating_sub(1))).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (sizes[b] * 7 % 10).cmp(&(sizes[a] * 7 % 10)).then(a.cmp(&b)));
    let mut assigned: usize = counts.iter().sum();
    while assigned < target {
        let Some(&s) = order.iter().find(|&&s| counts[s] + 1 < sizes[s] && counts[s] < sizes[s] * 7 / 10 + 1) else {
            break;
        };
        counts[s] += 1;
        assigned += 1;
    }
    counts
}

/// Stratified seeded 70/30 split. Regression tasks stratify by quartile.
pub fn split_users(
    users: &[String],
    labels: &BTreeMap<String, SoftLabels>,
    task: Task,
    seed: u64,
) -> Result<SplitSpec, ProtocolError> {
    let mut users: Vec<String> = users.iter().filter(|u| labels.contains_key(*u)).cloned().collect();
    users.sort();
    users.dedup();
    if users.len() < 4 {
        return Err(ProtocolError::TooFewUsers { users: users.len(), k: 4 });
    }
    let strata: Vec<usize> = match task.kind() {
        TaskKind::Classify => users.iter().map(|u| task.class_of(&labels[u])).collect(),
        TaskKind::Regress => quartile_classes(&users.iter().map(|u| task.value_of(&labels[u])).collect::<Vec<_>>()),
    };
    let n_strata = strata.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<String>> = vec![Vec::new(); n_strata];
    for (u, &s) in users.iter().zip(&strata) {
        members[s].push(u.clone());
    }
    if let Some((class, m)) = members.iter().enumerate().find(|(_, m)| m.len() == 1) {
        return Err(ProtocolError::StratumTooSmall { class: task.class_name(class), count: m.len() });
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let counts = stratum_train_counts(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train_users, mut test_users) = (Vec::new(), Vec::new());
    for (mut m, c) in members.into_iter().zip(counts) {
        m.shuffle(&mut rng);
        test_users.extend(m.split_off(c));
        train_users.extend(m);
    }
    train_users.sort();
    test_users.sort();
    Ok(SplitSpec { train_users, test_users, ratio: TRAIN_RATIO, stratify_by: task })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fit_users: Vec<String>,
    pub val_users: Vec<String>,
}

/// Seeded partition into `k` near-equal folds; the first `n % k` folds
/// take one extra user.
pub fn kfold(train_users: &[String], k: usize, seed: u64) -> Result<Vec<Fold>, ProtocolError> {
    let n = train_users.len();
    if k < 2 || n < k {
        return Err(ProtocolError::TooFewUsers { users: n, k });
    }
    let mut users = train_users.to_vec();
    users.sort();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = n / k + usize::from(i < n % k);
        let mut part = users[start..start + len].to_vec();
        part.sort();
        parts.push(part);
        start += len;
    }
    Ok((0..k)
        .map(|i| {
            let mut fit_users: Vec<String> = parts.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, p)| p.clone()).collect();
            fit_users.sort();
            Fold { fit_users, val_users: parts[i].clone() }
        })
        .collect())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, ProtocolError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(ProtocolError::LengthMismatch(pred.len(), truth.len()));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, ProtocolError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(ProtocolError::LengthMismatch(pred.len(), truth.len()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Per-stream aggregates, computed once per dataset.
pub struct FeatureStore<'a> {
    pub dataset: &'a Dataset,
    aggregated: BTreeMap<(String, Device, Mode), AggregatedStream>,
}

impl<'a> FeatureStore<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        let streams: Vec<_> = dataset
            .streams
            .iter()
            .flat_map(|(u, s)| s.iter().map(move |(k, e)| (u, k, e)))
            .collect();
        let aggregated = streams
            .par_iter()
            .map(|(u, k, e)| (((*u).clone(), k.device, k.mode), AggregatedStream::new(&StreamSeries::extract(e))))
            .collect();
        Self { dataset, aggregated }
    }

    /// Fits vocabularies on `fit_users`, then vectorizes each user group.
    pub fn vectors(
        &self,
        dc: DeviceConfig,
        mode: Mode,
        fit_users: &[String],
        groups: &[&[String]],
        caps: VocabularyCaps,
        stage: &str,
        records: &mut Vec<FitRecord>,
    ) -> Result<Vec<Vec<FeatureVector>>, ProtocolError> {
        let empty = AggregatedStream::default();
        let mut out: Vec<Vec<BTreeMap<Device, FeatureVector>>> =
            groups.iter().map(|g| vec![BTreeMap::new(); g.len()]).collect();
        for &device in dc.devices() {
            let training = fit_users
                .iter()
                .filter_map(|u| self.dataset.stream(u, device, mode).map(|s| (u.as_str(), s)));
            let vocab = match fit_vocabulary(device, mode, training, caps) {
                Err(FeatureError::EmptyTraining) => {
                    return Err(ProtocolError::MissingStreams(format!("{}/{}", device.as_str(), mode.as_str())))
                }
                r => r?,
            };
            records.push(FitRecord {
                stage: stage.into(),
                component: format!("vocabulary:{}", device.as_str()),
                users: vocab.fitted_on.clone(),
            });
            for (group, slots) in groups.iter().zip(out.iter_mut()) {
                for (u, slot) in group.iter().zip(slots.iter_mut()) {
                    let agg = self.aggregated.get(&(u.clone(), device, mode)).unwrap_or(&empty);
                    slot.insert(device, vectorize_aggregated(u, agg, &vocab));
                }
            }
        }
        let one = |mut m: BTreeMap<Device, FeatureVector>| -> Result<FeatureVector, ProtocolError> {
            if dc == DeviceConfig::Combined {
                Ok(combine_devices(&m)?)
            } else {
                Ok(m.pop_first().expect("one device").1)
            }
        };
        out.into_iter().map(|g| g.into_iter().map(one).collect()).collect()
    }
}

/// Log entry for one fitted component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub stage: String,
    pub component: String,
    pub users: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Labels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Labels {
    fn of(task: Task, users: &[String], labels: &BTreeMap<String, SoftLabels>) -> Self {
        match task.kind() {
            TaskKind::Classify => Labels::Classes(users.iter().map(|u| task.class_of(&labels[u])).collect()),
            TaskKind::Regress => Labels::Values(users.iter().map(|u| task.value_of(&labels[u])).collect()),
        }
    }
}

/// Training rows for one selector size after oversampling.
#[derive(Debug, Clone)]
struct TrainSet {
    rows: Vec<Vec<f64>>,
    labels: Labels,
    smote_note: Option<String>,
}

/// One fit/evaluate partition with every preprocessing step fitted.
#[derive(Debug, Clone)]
struct Prepared {
    stage: String,
    feature_count: usize,
    /// Standardized rows restricted to the top `max k` ranked features.
    eval_rows: Vec<Vec<f64>>,
    eval_labels: Labels,
    train: Vec<TrainSet>,
    records: Vec<FitRecord>,
}

fn prepare(
    store: &FeatureStore<'_>,
    task: Task,
    dc: DeviceConfig,
    mode: Mode,
    fit_users: &[String],
    eval_users: &[String],
    ks: &[usize],
    settings: &ProtocolSettings,
    stage: &str,
    seed: u64,
) -> Result<Prepared, ProtocolError> {
    let mut records = Vec::new();
    let mut groups = store.vectors(dc, mode, fit_users, &[fit_users, eval_users], settings.caps, stage, &mut records)?;
    let eval_vecs = groups.pop().expect("two groups");
    let fit_vecs = groups.pop().expect("two groups");
    let split = |v: &[FeatureVector]| -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
        v.iter().map(|f| (f.values.clone(), f.missing_mask.clone())).unzip()
    };
    let (fit_raw, fit_mask) = split(&fit_vecs);
    let (eval_raw, eval_mask) = split(&eval_vecs);
    let standardizer = Standardizer::fit(&fit_raw, &fit_mask, fit_users.to_vec())?;
    records.push(FitRecord { stage: stage.into(), component: "standardizer".into(), users: standardizer.fitted_on.clone() });
    let fit_std = standardizer.transform(&fit_raw, &fit_mask)?;
    let eval_std = standardizer.transform(&eval_raw, &eval_mask)?;
    let fit_labels = Labels::of(task, fit_users, &store.dataset.labels);
    let eval_labels = Labels::of(task, eval_users, &store.dataset.labels);
    let target = match &fit_labels {
        Labels::Classes(c) => SelectionTarget::Classes(c),
        Labels::Values(v) => SelectionTarget::Values(v),
    };
    let feature_count = fit_std.first().map_or(0, Vec::len);
    let kmax = ks.iter().copied().max().unwrap_or(0).min(feature_count);
    let selector = MiSelector::rank(&fit_std, target, settings.mi_bins)?.truncate(kmax)?;
    records.push(FitRecord { stage: stage.into(), component: "selector".into(), users: fit_users.to_vec() });
    let fit_rows = selector.apply(&fit_std);
    let eval_rows = selector.apply(&eval_std);

    let mut train = Vec::with_capacity(ks.len());
    for &k in ks {
        let k = k.min(feature_count);
        let rows: Vec<Vec<f64>> = fit_rows.iter().map(|r| r[..k].to_vec()).collect();
        train.push(match &fit_labels {
            Labels::Values(_) => TrainSet { rows, labels: fit_labels.clone(), smote_note: None },
            Labels::Classes(c) => {
                // dense relabelling so absent classes are not oversampled
                let present: Vec<usize> = c.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
                let dense: Vec<usize> = c.iter().map(|x| present.binary_search(x).expect("present")).collect();
                let cfg = SmoteConfig {
                    k_generate: settings.smote_k,
                    m_danger: settings.smote_m,
                    seed: stable_hash(&[&seed.to_le_bytes(), stage.as_bytes(), &k.to_le_bytes()]),
                };
                match borderline_smote(&rows, &dense, cfg) {
                    Ok(out) => {
                        let note = (!out.fallback_classes.is_empty()).then(|| {
                            let names: Vec<String> =
                                out.fallback_classes.iter().map(|&c| task.class_name(present[c])).collect();
                            format!("{stage} k={k}: plain SMOTE for class {}", names.join(","))
                        });
                        let labels = Labels::Classes(out.labels.iter().map(|&d| present[d]).collect());
                        TrainSet { rows: out.rows, labels, smote_note: note }
                    }
                    Err(PreprocessError::TooFewMinority { class, count }) => TrainSet {
                        rows,
                        labels: fit_labels.clone(),
                        smote_note: Some(format!(
                            "{stage} k={k}: not oversampled, class {} has {count} user(s)",
                            task.class_name(present[class])
                        )),
                    },
                    Err(e) => return Err(e.into()),
                }
            }
        });
    }
    if task.kind() == TaskKind::Classify {
        records.push(FitRecord { stage: stage.into(), component: "smote".into(), users: fit_users.to_vec() });
    }
    Ok(Prepared { stage: stage.into(), feature_count, eval_rows, eval_labels, train, records })
}

/// Split, folds and every preprocessing fit for one (task, device config,
/// mode, seed); shared by all models evaluated on it.
#[derive(Debug, Clone)]
pub struct Context {
    pub task: Task,
    pub device_config: DeviceConfig,
    pub mode: Mode,
    pub seed: u64,
    pub split: SplitSpec,
    pub folds: Vec<Fold>,
    pub selector_k: Vec<usize>,
    fold_data: Vec<Prepared>,
    refit: Prepared,
}

impl Context {
    pub fn new(
        store: &FeatureStore<'_>,
        task: Task,
        dc: DeviceConfig,
        mode: Mode,
        selector_k: &[usize],
        seed: u64,
        settings: &ProtocolSettings,
    ) -> Result<Self, ProtocolError> {
        let users: Vec<String> = store.dataset.users().map(String::from).collect();
        let split = split_users(&users, &store.dataset.labels, task, seed)?;
        Self::with_split(store, task, dc, mode, selector_k, seed, settings, split)
    }

    /// As [`Context::new`] with a given split.
    #[allow(clippy::too_many_arguments)]
    pub fn with_split(
        store: &FeatureStore<'_>,
        task: Task,
        dc: DeviceConfig,
        mode: Mode,
        selector_k: &[usize],
        seed: u64,
        settings: &ProtocolSettings,
        split: SplitSpec,
    ) -> Result<Self, ProtocolError> {
        if selector_k.is_empty() || selector_k.contains(&0) {
            return Err(ProtocolError::EmptyGrid);
        }
        let folds = kfold(&split.train_users, settings.folds, stable_hash(&[&seed.to_le_bytes(), b"kfold"]))?;
        let fold_data = folds
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let stage = format!("fold{}", i + 1);
                prepare(store, task, dc, mode, &f.fit_users, &f.val_users, selector_k, settings, &stage, seed)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let refit =
            prepare(store, task, dc, mode, &split.train_users, &split.test_users, selector_k, settings, "refit", seed)?;
        Ok(Self {
            task,
            device_config: dc,
            mode,
            seed,
            split,
            folds,
            selector_k: selector_k.to_vec(),
            fold_data,
            refit,
        })
    }

    /// Grid search over selector sizes (outer) and model parameters (inner),
    /// refit with the winner, and score on the test users.
    pub fn evaluate(
        &self,
        model: ModelKind,
        grid: &[Params],
        settings: &ProtocolSettings,
    ) -> Result<ExperimentResult, ProtocolError> {
        if !model.supports(self.task) {
            return Err(ProtocolError::Incompatible { model: model.name().into(), task: self.task });
        }
        if grid.is_empty() {
            return Err(ProtocolError::EmptyGrid);
        }
        let (points, first_failure) =
            grid_points(self.task, model, grid, settings, self.seed, &self.fold_data, &self.selector_k);
        let winner = select_winner(&points, self.task.kind()).ok_or_else(|| {
            let e = first_failure.expect("every point failed");
            ProtocolError::NoViableGridPoint { first: e.to_string(), numeric: e.is_numeric() }
        })?;
        let ki = winner / grid.len();
        let set = &self.refit.train[ki];
        let k = set.rows.first().map_or(0, Vec::len);
        let fitted = train(self.task, model, &points[winner].params, settings, self.seed, set)?;
        let test_rows: Vec<Vec<f64>> = self.refit.eval_rows.iter().map(|r| r[..k].to_vec()).collect();
        let (metric, baseline, test_balance) = match (&self.refit.eval_labels, fitted.predict(&test_rows)?) {
            (Labels::Classes(truth), Prediction::Classes(pred)) => {
                let mut counts = vec![0; self.task.n_classes()];
                truth.iter().for_each(|&c| counts[c] += 1);
                let majority = *counts.iter().max().unwrap_or(&0) as f64 / truth.len() as f64;
                (accuracy(&pred, truth)?, majority, counts)
            }
            (Labels::Values(truth), Prediction::Values(pred)) => {
                let Labels::Values(train_y) = &self.refit.train[ki].labels else { unreachable!() };
                let mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
                (mae(&pred, truth)?, mae(&vec![mean; truth.len()], truth)?, Vec::new())
            }
            _ => unreachable!("prediction kind follows the task"),
        };
        let mut fit_records: Vec<FitRecord> =
            self.fold_data.iter().chain([&self.refit]).flat_map(|p| p.records.clone()).collect();
        for p in self.fold_data.iter().chain([&self.refit]) {
            let users = match p.stage.as_str() {
                "refit" => self.split.train_users.clone(),
                s => self.folds[s[4..].parse::<usize>().expect("fold stage") - 1].fit_users.clone(),
            };
            fit_records.push(FitRecord { stage: p.stage.clone(), component: format!("model:{}", model.name()), users });
        }
        let smote_notes = self
            .fold_data
            .iter()
            .chain([&self.refit])
            .filter_map(|p| p.train[ki].smote_note.clone())
            .collect();
        let provenance = CellProvenance {
            task: self.task,
            device_config: self.device_config,
            mode: self.mode,
            model,
            seed: self.seed,
            train_users: self.split.train_users.clone(),
            test_users: self.split.test_users.clone(),
            folds: self.folds.iter().map(|f| f.val_users.clone()).collect(),
            feature_count: self.refit.feature_count,
            selected_k: k,
            grid: points,
            winner,
            smote_notes,
            fit_records,
            metric,
            baseline,
            test_balance,
        };
        Ok(ExperimentResult { metric, provenance, model: fitted })
    }
}

/// Cross-validated score of every (selector size, params) point, selector
/// size varying slowest.
fn grid_points(
    task: Task,
    model: ModelKind,
    grid: &[Params],
    settings: &ProtocolSettings,
    seed: u64,
    folds: &[Prepared],
    ks: &[usize],
) -> (Vec<GridPoint>, Option<ProtocolError>) {
    let mut points = Vec::new();
    let mut first_failure = None;
    for (ki, &k) in ks.iter().enumerate() {
        for params in grid {
            let fold_metrics: Vec<Option<f64>> = folds
                .iter()
                .map(|p| match score(task, model, params, settings, seed, p, ki) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        first_failure.get_or_insert(e);
                        None
                    }
                })
                .collect();
            let mean = fold_metrics
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|m| m.iter().sum::<f64>() / m.len() as f64);
            let k = k.min(folds.first().map_or(k, |p| p.feature_count));
            points.push(GridPoint { selector_k: k, params: params.clone(), fold_metrics, mean });
        }
    }
    (points, first_failure)
}

/// Best mean metric; ties go to the earliest point.
pub fn select_winner(points: &[GridPoint], kind: TaskKind) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let Some(m) = p.mean else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => match kind {
                TaskKind::Classify => m > b,
                TaskKind::Regress => m < b,
            },
        };
        if better {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i)
}

fn score(
    task: Task,
    model: ModelKind,
    params: &Params,
    settings: &ProtocolSettings,
    seed: u64,
    p: &Prepared,
    ki: usize,
) -> Result<f64, ProtocolError> {
    let set = &p.train[ki];
    let k = set.rows.first().map_or(0, Vec::len);
    let rows: Vec<Vec<f64>> = p.eval_rows.iter().map(|r| r[..k].to_vec()).collect();
    let fitted = train(task, model, params, settings, seed, set)?;
    match (&p.eval_labels, fitted.predict(&rows)?) {
        (Labels::Classes(t), Prediction::Classes(pr)) => accuracy(&pr, t),
        (Labels::Values(t), Prediction::Values(pr)) => mae(&pr, t),
        _ => unreachable!("prediction kind follows the task"),
    }
}

/// A fitted learner of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Classical(TrainedModel),
    Neural(TrainedNetwork),
}

#[derive(Debug, Clone, PartialEq)]
enum Prediction {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl FittedModel {
    fn predict(&self, rows: &[Vec<f64>]) -> Result<Prediction, ProtocolError> {
        match self {
            FittedModel::Classical(m) => Ok(match m.predict(rows)? {
                ml::Predictions::Classes(c) => Prediction::Classes(c),
                ml::Predictions::Values(v) => Prediction::Values(v),
            }),
            FittedModel::Neural(n) if n.network.spec.is_classifier() => Ok(Prediction::Classes(n.predict_classes(rows)?)),
            FittedModel::Neural(n) => Ok(Prediction::Values(n.predict_values(rows)?)),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            FittedModel::Classical(m) => m.to_json().expect("model serializes"),
            FittedModel::Neural(n) => serde_json::to_string(n).expect("network serializes"),
        }
    }
}

fn train(
    task: Task,
    model: ModelKind,
    params: &Params,
    settings: &ProtocolSettings,
    seed: u64,
    set: &TrainSet,
) -> Result<FittedModel, ProtocolError> {
    let y = match &set.labels {
        Labels::Classes(c) => Targets::Classes(c),
        Labels::Values(v) => Targets::Values(v),
    };
    match model {
        ModelKind::Classical(a) => {
            let spec = ModelSpec::new(a, task.kind())?.with_all(params)?.with_seed(seed);
            Ok(FittedModel::Classical(ml::fit(&spec, &set.rows, y)?))
        }
        ModelKind::Neural(arch) => {
            let mut cfg = TrainConfig {
                epochs: settings.neural_epochs,
                batch_size: settings.neural_batch_size,
                seed,
                ..TrainConfig::default()
            };
            for (key, v) in params {
                match key.as_str() {
                    "lr" => cfg.learning_rate = *v,
                    "epochs" => cfg.epochs = *v as usize,
                    "batch_size" => cfg.batch_size = *v as usize,
                    other => return Err(NeuralError::BadConfig(format!("unknown hyperparameter '{other}'")).into()),
                }
            }
            let head = match task.kind() {
                TaskKind::Classify => Head::Classes(task.n_classes()),
                TaskKind::Regress => Head::Scalar,
            };
            let opts = ArchOptions { strict_reshape: settings.strict_reshape, seed, ..ArchOptions::default() };
            let dim = set.rows.first().map_or(0, Vec::len);
            let spec = build_architecture(arch, dim, head, &opts)?;
            let target = match y {
                Targets::Classes(c) => Target::Classes(c),
                Targets::Values(v) => Target::Values(v),
            };
            Ok(FittedModel::Neural(train_network(spec, &cfg, &set.rows, target)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub selector_k: usize,
    pub params: Params,
    /// `None` where training failed.
    pub fold_metrics: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// Everything needed to audit or reproduce one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub task: Task,
    pub device_config: DeviceConfig,
    pub mode: Mode,
    pub model: ModelKind,
    pub seed: u64,
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
    /// Validation users of each fold.
    pub folds: Vec<Vec<String>>,
    /// Columns before selection.
    pub feature_count: usize,
    pub selected_k: usize,
    pub grid: Vec<GridPoint>,
    pub winner: usize,
    pub smote_notes: Vec<String>,
    pub fit_records: Vec<FitRecord>,
    pub metric: f64,
    /// Majority-class share of the test users, or the MAE of predicting the
    /// training mean.
    pub baseline: f64,
    /// Test users per class (classification only).
    pub test_balance: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metric: f64,
    pub provenance: CellProvenance,
    pub model: FittedModel,
}

/// Split, grid search, refit and test for one cell.
pub fn run_experiment(
    config: &ExperimentConfig,
    store: &FeatureStore<'_>,
    settings: &ProtocolSettings,
) -> Result<ExperimentResult, ProtocolError> {
    config.validate()?;
    let ctx = Context::new(store, config.task, config.device_config, config.mode, &config.selector_k, config.seed, settings)?;
    ctx.evaluate(config.model, &config.grid, settings)
}
