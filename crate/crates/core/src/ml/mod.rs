//! Classical learners behind one fit/predict contract.
//!
//! | algorithm      | classify | regress |
//! |----------------|----------|---------|
//! | Gaussian NB    | yes      |         |
//! | KNN            | yes      | yes     |
//! | CART tree      | yes      | yes     |
//! | AdaBoost SAMME | yes      |         |
//! | linear SVM/SVR | yes      | yes     |
//! | 1-hidden MLP   | yes      | yes     |
//! | boosted trees  | yes      | yes     |
//!
//! Training rows are put in a canonical order before fitting, so every
//! learner is invariant to the order of its training rows.

pub mod adaboost;
pub mod gbt;
pub mod knn;
pub mod mlp;
pub mod naive_bayes;
pub mod svm;
pub mod tree;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("bad model spec: {0}")]
    BadSpec(String),
    #[error("degenerate training data: {0}")]
    DegenerateData(&'static str),
    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} rows but {1} targets")]
    LengthMismatch(usize, usize),
    #[error("target kind does not match the model's task")]
    TaskMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    NaiveBayes,
    Knn,
    DecisionTree,
    AdaBoost,
    LinearSvm,
    Mlp1,
    Gbt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::NaiveBayes,
        Algorithm::Knn,
        Algorithm::DecisionTree,
        Algorithm::AdaBoost,
        Algorithm::LinearSvm,
        Algorithm::Mlp1,
        Algorithm::Gbt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NaiveBayes => "NaiveBayes",
            Algorithm::Knn => "KNN",
            Algorithm::DecisionTree => "DecisionTree",
            Algorithm::AdaBoost => "AdaBoost",
            Algorithm::LinearSvm => "SVM",
            Algorithm::Mlp1 => "MLP",
            Algorithm::Gbt => "XGBoost",
        }
    }

    pub fn supports(self, task: TaskKind) -> bool {
        !matches!((self, task), (Algorithm::NaiveBayes | Algorithm::AdaBoost, TaskKind::Regress))
    }

    /// Default value and whether the parameter must be a positive integer.
    fn parameters(self) -> &'static [(&'static str, f64, bool)] {
        match self {
            Algorithm::NaiveBayes => &[("var_floor", 1e-9, false)],
            Algorithm::Knn => &[("k", 5.0, true)],
            Algorithm::DecisionTree => &[("max_depth", 5.0, true), ("min_samples_leaf", 1.0, true)],
            Algorithm::AdaBoost => &[("rounds", 50.0, true)],
            Algorithm::LinearSvm => &[("lambda", 1e-3, false), ("lr", 0.1, false), ("epochs", 50.0, true), ("epsilon", 0.1, false)],
            Algorithm::Mlp1 => &[("hidden", 64.0, true), ("lr", 0.1, false), ("epochs", 300.0, true), ("l2", 1e-4, false)],
            Algorithm::Gbt => &[
                ("trees", 100.0, true),
                ("eta", 0.1, false),
                ("max_depth", 3.0, true),
                ("lambda_reg", 1.0, false),
                ("min_child_weight", 1.0, false),
                ("gamma", 0.0, false),
            ],
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Classify,
    Regress,
}

/// Algorithm identity plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub algorithm: Algorithm,
    pub task: TaskKind,
    pub hyperparameters: BTreeMap<String, f64>,
    pub seed: u64,
}

impl ModelSpec {
    /// A spec with every hyperparameter at its default.
    pub fn new(algorithm: Algorithm, task: TaskKind) -> Result<Self, MlError> {
        if !algorithm.supports(task) {
            return Err(MlError::BadSpec(format!("{algorithm} cannot be used for {task:?}")));
        }
        let hyperparameters = algorithm
            .parameters()
            .iter()
            .map(|(k, v, _)| (k.to_string(), *v))
            .collect();
        Ok(Self { algorithm, task, hyperparameters, seed: 0 })
    }

    pub fn with(mut self, key: &str, value: f64) -> Result<Self, MlError> {
        let Some((_, _, integral)) = self.algorithm.parameters().iter().find(|(k, _, _)| *k == key) else {
            return Err(MlError::BadSpec(format!("{} has no hyperparameter `{key}`", self.algorithm)));
        };
        let ok = value.is_finite()
            && if *integral { value >= 1.0 && value.fract() == 0.0 } else { value >= 0.0 };
        if !ok {
            return Err(MlError::BadSpec(format!("{key} = {value} out of range")));
        }
        self.hyperparameters.insert(key.to_string(), value);
        Ok(self)
    }

    pub fn with_all(self, params: &BTreeMap<String, f64>) -> Result<Self, MlError> {
        params.iter().try_fold(self, |s, (k, v)| s.with(k, *v))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), MlError> {
        if !self.algorithm.supports(self.task) {
            return Err(MlError::BadSpec(format!("{} cannot be used for {:?}", self.algorithm, self.task)));
        }
        let base = ModelSpec::new(self.algorithm, self.task)?;
        base.with_all(&self.hyperparameters).map(|_| ())
    }

    pub fn get(&self, key: &str) -> f64 {
        self.hyperparameters[key]
    }

    pub fn get_usize(&self, key: &str) -> usize {
        self.hyperparameters[key] as usize
    }
}

/// Hyperparameter grid searched for each algorithm.
pub fn default_grid(algorithm: Algorithm, task: TaskKind) -> Vec<BTreeMap<String, f64>> {
    let axes: Vec<(&str, Vec<f64>)> = match algorithm {
        Algorithm::NaiveBayes => vec![],
        Algorithm::Knn => vec![("k", vec![3.0, 5.0, 7.0, 9.0, 15.0])],
        Algorithm::DecisionTree => vec![("max_depth", vec![3.0, 5.0, 10.0])],
        Algorithm::AdaBoost => vec![("rounds", vec![50.0, 100.0, 200.0])],
        Algorithm::LinearSvm => vec![("lambda", vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0])],
        Algorithm::Mlp1 => vec![("hidden", vec![32.0, 64.0, 128.0]), ("lr", vec![0.01, 0.1])],
        Algorithm::Gbt => vec![
            ("trees", vec![50.0, 100.0, 200.0]),
            ("eta", vec![0.05, 0.1, 0.3]),
            ("max_depth", vec![3.0, 5.0]),
            ("lambda_reg", vec![1.0]),
        ],
    };
    let _ = task;
    cartesian(&axes)
}

/// All combinations of the axes, first axis varying slowest.
pub fn cartesian(axes: &[(&str, Vec<f64>)]) -> Vec<BTreeMap<String, f64>> {
    let mut points = vec![BTreeMap::new()];
    for (name, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(name.to_string(), *v);
                    q
                })
            })
            .collect();
    }
    points
}

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictions {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Predictions {
    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Predictions::Classes(c) => Some(c),
            Predictions::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Predictions::Values(v) => Some(v),
            Predictions::Classes(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Parameters {
    NaiveBayes(naive_bayes::GaussianNb),
    Knn(knn::Knn),
    Tree(tree::Tree),
    AdaBoost(adaboost::AdaBoost),
    Svm(svm::LinearSvm),
    Mlp(mlp::Mlp),
    Gbt(gbt::Gbt),
}

/// A fitted model. Class predictions are reported in the caller's label
/// space; internally classes are indexed by their position in `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub classes: Vec<usize>,
    pub dim: usize,
    pub parameters: Parameters,
}

/// Encoded targets after canonical reordering.
pub(crate) enum Encoded {
    Classes(Vec<usize>, usize),
    Values(Vec<f64>),
}

fn canonical_order(x: &[Vec<f64>], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(key(a).total_cmp(&key(b)))
    });
    idx
}

pub fn fit(spec: &ModelSpec, x: &[Vec<f64>], y: Targets<'_>) -> Result<TrainedModel, MlError> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(MlError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MlError::DegenerateData("fewer than two rows"));
    }
    let dim = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != dim) {
        return Err(MlError::DimensionMismatch { expected: dim, got: r.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MlError::DegenerateData("non-finite feature value"));
    }
    let (classes, order, encoded) = match (spec.task, y) {
        (TaskKind::Classify, Targets::Classes(labels)) => {
            let mut classes = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            if classes.len() < 2 {
                return Err(MlError::DegenerateData("a single class"));
            }
            let order = canonical_order(x, |i| labels[i] as f64);
            let enc = order
                .iter()
                .map(|&i| classes.binary_search(&labels[i]).expect("present"))
                .collect();
            (classes.clone(), order, Encoded::Classes(enc, classes.len()))
        }
        (TaskKind::Regress, Targets::Values(values)) => {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(MlError::DegenerateData("non-finite target"));
            }
            let order = canonical_order(x, |i| values[i]);
            let enc = order.iter().map(|&i| values[i]).collect();
            (Vec::new(), order, Encoded::Values(enc))
        }
        _ => return Err(MlError::TaskMismatch),
    };
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let parameters = match spec.algorithm {
        Algorithm::NaiveBayes => match &encoded {
            Encoded::Classes(c, k) => Parameters::NaiveBayes(naive_bayes::GaussianNb::fit(&xs, c, *k, spec.get("var_floor"))),
            Encoded::Values(_) => return Err(MlError::TaskMismatch),
        },
        Algorithm::Knn => Parameters::Knn(knn::Knn::fit(&xs, &encoded, spec.get_usize("k"))),
        Algorithm::DecisionTree => {
            let params = tree::TreeParams {
                max_depth: spec.get_usize("max_depth"),
                min_samples_leaf: spec.get_usize("min_samples_leaf"),
            };
            Parameters::Tree(match &encoded {
                Encoded::Classes(c, k) => tree::Tree::fit_classifier(&xs, c, *k, None, params),
                Encoded::Values(v) => tree::Tree::fit_regressor(&xs, v, params),
            })
        }
        Algorithm::AdaBoost => match &encoded {
            Encoded::Classes(c, k) => Parameters::AdaBoost(adaboost::AdaBoost::fit(&xs, c, *k, spec.get_usize("rounds"))),
            Encoded::Values(_) => return Err(MlError::TaskMismatch),
        },
        Algorithm::LinearSvm => Parameters::Svm(svm::LinearSvm::fit(&xs, &encoded, svm::SvmParams::from_spec(spec))),
        Algorithm::Mlp1 => Parameters::Mlp(mlp::Mlp::fit(&xs, &encoded, mlp::MlpParams::from_spec(spec))),
        Algorithm::Gbt => Parameters::Gbt(gbt::Gbt::fit(&xs, &encoded, gbt::GbtParams::from_spec(spec))),
    };
    Ok(TrainedModel { spec: spec.clone(), classes, dim, parameters })
}

impl TrainedModel {
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Predictions, MlError> {
        if let Some(r) = x.iter().find(|r| r.len() != self.dim) {
            return Err(MlError::DimensionMismatch { expected: self.dim, got: r.len() });
        }
        let out = match self.spec.task {
            TaskKind::Classify => {
                let idx: Vec<usize> = x.iter().map(|r| self.predict_class_index(r)).collect();
                Predictions::Classes(idx.into_iter().map(|i| self.classes[i]).collect())
            }
            TaskKind::Regress => Predictions::Values(x.iter().map(|r| self.predict_value(r)).collect()),
        };
        Ok(out)
    }

    fn predict_class_index(&self, row: &[f64]) -> usize {
        match &self.parameters {
            Parameters::NaiveBayes(m) => argmax_first(&m.log_posterior(row)),
            Parameters::Knn(m) => m.predict_class(row),
            Parameters::Tree(m) => argmax_first(m.leaf_value(row)),
            Parameters::AdaBoost(m) => argmax_first(&m.scores(row)),
            Parameters::Svm(m) => m.predict_class(row),
            Parameters::Mlp(m) => argmax_first(&m.forward(row)),
            Parameters::Gbt(m) => m.predict_class(row),
        }
    }

    fn predict_value(&self, row: &[f64]) -> f64 {
        match &self.parameters {
            Parameters::Knn(m) => m.predict_value(row),
            Parameters::Tree(m) => m.leaf_value(row)[0],
            Parameters::Svm(m) => m.predict_value(row),
            Parameters::Mlp(m) => m.predict_value(row),
            Parameters::Gbt(m) => m.predict_value(row),
            Parameters::NaiveBayes(_) | Parameters::AdaBoost(_) => unreachable!("classify-only"),
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Index of the largest entry; the earliest wins ties.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
pub(crate) mod testdata {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Two 2-D Gaussian blobs (unit σ) whose centres are `sep` apart.
    pub fn blobs(n_per: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for class in 0..2 {
            let c = if class == 0 { -sep / 2.0 } else { sep / 2.0 };
            for _ in 0..n_per {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                x.push(vec![c + a, c + b]);
                y.push(class);
            }
        }
        (x, y)
    }

    /// The four XOR corners, each repeated `reps` times with tiny jitter.
    pub fn xor(reps: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in 0..reps {
            let j = r as f64 * 1e-3;
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                x.push(vec![a + j, b - j]);
                y.push(usize::from((a > 0.5) != (b > 0.5)));
            }
        }
        (x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: Algorithm, t: TaskKind) -> ModelSpec {
        ModelSpec::new(a, t).unwrap()
    }

    #[test]
    fn unsupported_pairs_rejected() {
        assert!(ModelSpec::new(Algorithm::NaiveBayes, TaskKind::Regress).is_err());
        assert!(ModelSpec::new(Algorithm::AdaBoost, TaskKind::Regress).is_err());
        for a in [Algorithm::Knn, Algorithm::Gbt, Algorithm::LinearSvm, Algorithm::Mlp1, Algorithm::DecisionTree] {
            assert!(ModelSpec::new(a, TaskKind::Regress).is_ok());
        }
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let s = spec(Algorithm::Knn, TaskKind::Classify);
        assert!(s.clone().with("k", 0.0).is_err());
        assert!(s.clone().with("k", 2.5).is_err());
        assert!(s.clone().with("depth", 2.0).is_err());
        assert!(s.with("k", 3.0).is_ok());
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(default_grid(Algorithm::Gbt, TaskKind::Classify).len(), 18);
        assert_eq!(default_grid(Algorithm::Mlp1, TaskKind::Classify).len(), 6);
        assert_eq!(default_grid(Algorithm::NaiveBayes, TaskKind::Classify), vec![BTreeMap::new()]);
    }

    #[test]
    fn every_classifier_separates_distant_blobs() {
        let (x, y) = testdata::blobs(30, 10.0, 1);
        for a in Algorithm::ALL {
            let m = fit(&spec(a, TaskKind::Classify), &x, Targets::Classes(&y)).unwrap();
            let p = m.predict(&x).unwrap();
            assert_eq!(p.classes().unwrap(), y.as_slice(), "{a}");
        }
    }

    #[test]
    fn constant_regression_target() {
        let (x, _) = testdata::blobs(10, 3.0, 2);
        let y = vec![7.5; x.len()];
        for a in [Algorithm::Gbt, Algorithm::Knn, Algorithm::DecisionTree] {
            let m = fit(&spec(a, TaskKind::Regress), &x, Targets::Values(&y)).unwrap();
            for v in m.predict(&[vec![0.3, -9.0], vec![100.0, 4.0]]).unwrap().values().unwrap() {
                assert!((v - 7.5).abs() < 1e-12, "{a}: {v}");
            }
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = vec![vec![0.0], vec![1.0]];
        let err = fit(&spec(Algorithm::Knn, TaskKind::Classify), &x, Targets::Classes(&[3, 3])).unwrap_err();
        assert!(matches!(err, MlError::DegenerateData(_)));
    }

    #[test]
    fn predicted_labels_come_from_training_labels() {
        let (x, y) = testdata::blobs(15, 2.0, 3);
        let y: Vec<usize> = y.iter().map(|c| 10 + 5 * c).collect();
        for a in Algorithm::ALL {
            let m = fit(&spec(a, TaskKind::Classify), &x, Targets::Classes(&y)).unwrap();
            let probe: Vec<Vec<f64>> = (-5..5).map(|i| vec![i as f64, -i as f64 * 0.7]).collect();
            for c in m.predict(&probe).unwrap().classes().unwrap() {
                assert!(*c == 10 || *c == 15);
            }
        }
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let (x, y) = testdata::blobs(5, 5.0, 4);
        let m = fit(&spec(Algorithm::NaiveBayes, TaskKind::Classify), &x, Targets::Classes(&y)).unwrap();
        assert_eq!(m.predict(&[vec![1.0]]), Err(MlError::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn json_round_trip_predicts_identically() {
        let (x, y) = testdata::blobs(20, 2.0, 5);
        let m = fit(&spec(Algorithm::Gbt, TaskKind::Classify), &x, Targets::Classes(&y)).unwrap();
        let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
    }
}
