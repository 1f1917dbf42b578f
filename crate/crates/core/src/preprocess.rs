//! Transforms fitted on training rows: mean imputation, z-scoring, mutual
//! information feature ranking, and borderline-SMOTE oversampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} values vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("cannot select {k} of {available} features")]
    KTooLarge { k: usize, available: usize },
    #[error("class {class} has {count} samples; oversampling needs at least 2")]
    TooFewMinority { class: usize, count: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("no rows to fit on")]
    Empty,
}

/// Per-feature mean and standard deviation from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero spread (or no observed value); their std is 1.
    pub constant: Vec<bool>,
    pub fitted_on: Vec<String>,
}

impl Standardizer {
    /// Fits on observed (unmasked) entries only. Population std.
    pub fn fit(rows: &[Vec<f64>], masks: &[Vec<bool>], fitted_on: Vec<String>) -> Result<Self, PreprocessError> {
        let dim = rows.first().map(Vec::len).ok_or(PreprocessError::Empty)?;
        check_shape(rows, masks, dim)?;
        let mut mean = vec![0.0; dim];
        let mut std = vec![1.0; dim];
        let mut constant = vec![false; dim];
        for j in 0..dim {
            let observed: Vec<f64> = rows
                .iter()
                .zip(masks)
                .filter(|(_, m)| !m[j])
                .map(|(r, _)| r[j])
                .collect();
            if observed.is_empty() {
                constant[j] = true;
                continue;
            }
            let n = observed.len() as f64;
            let mu = observed.iter().sum::<f64>() / n;
            let sd = (observed.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            mean[j] = mu;
            if sd > 1e-12 * mu.abs().max(1.0) {
                std[j] = sd;
            } else {
                constant[j] = true;
            }
        }
        Ok(Self { mean, std, constant, fitted_on })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Masked entries become the training mean, then every entry is z-scored.
    /// Constant features map to 0.
    pub fn transform(&self, rows: &[Vec<f64>], masks: &[Vec<bool>]) -> Result<Vec<Vec<f64>>, PreprocessError> {
        check_shape(rows, masks, self.dim())?;
        Ok(rows
            .iter()
            .zip(masks)
            .map(|(row, mask)| {
                (0..self.dim())
                    .map(|j| {
                        if self.constant[j] {
                            return 0.0;
                        }
                        let x = if mask[j] { self.mean[j] } else { row[j] };
                        (x - self.mean[j]) / self.std[j]
                    })
                    .collect()
            })
            .collect())
    }
}

fn check_shape(rows: &[Vec<f64>], masks: &[Vec<bool>], dim: usize) -> Result<(), PreprocessError> {
    if rows.len() != masks.len() {
        return Err(PreprocessError::LengthMismatch(rows.len(), masks.len()));
    }
    for (r, m) in rows.iter().zip(masks) {
        for len in [r.len(), m.len()] {
            if len != dim {
                return Err(PreprocessError::DimensionMismatch { expected: dim, got: len });
            }
        }
    }
    Ok(())
}

/// Assigns each value to one of at most `bins` equal-frequency bins.
///
/// Edges are order statistics `sorted[floor(j·n/bins)]`, `j = 1..bins`;
/// duplicate edges collapse, so tied values always share a bin. A value's
/// bin is the number of edges not above it. Binning depends only on ranks,
/// so any strictly increasing transform of `x` yields the same bins.
pub fn equal_frequency_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins.max(1)).map(|j| sorted[(j * n / bins).min(n - 1)]).collect();
    edges.dedup();
    x.iter().map(|v| edges.partition_point(|e| e <= v)).collect()
}

/// Mutual information in nats between two discrete variables.
pub fn discrete_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let na = a.iter().max().map_or(0, |m| m + 1);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; na * nb];
    let mut pa = vec![0usize; na];
    let mut pb = vec![0usize; nb];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * nb + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let c = joint[i * nb + j];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (pa[i] as f64 * pb[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// MI between a continuous feature (equal-frequency binned) and class labels.
pub fn mutual_information(x: &[f64], y: &[usize], bins: usize) -> Result<f64, PreprocessError> {
    if x.len() != y.len() {
        return Err(PreprocessError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(PreprocessError::Empty);
    }
    Ok(discrete_mutual_information(&equal_frequency_bins(x, bins), y))
}

/// Bins real targets into 4 quantile classes (for ranking regression features).
pub fn quartile_classes(values: &[f64]) -> Vec<usize> {
    equal_frequency_bins(values, 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetBinning {
    None,
    Quartile,
}

/// Selection targets: class labels, or reals to be quartile-binned.
#[derive(Debug, Clone, Copy)]
pub enum SelectionTarget<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

pub const DEFAULT_MI_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiSelector {
    pub scores: Vec<f64>,
    /// Feature indices by score descending, ties by index ascending.
    pub selected: Vec<usize>,
    pub bins: usize,
    pub target_binning: TargetBinning,
}

impl MiSelector {
    /// Scores every feature and keeps the full ranking.
    pub fn rank(rows: &[Vec<f64>], target: SelectionTarget<'_>, bins: usize) -> Result<Self, PreprocessError> {
        let (labels, target_binning) = match target {
            SelectionTarget::Classes(c) => (c.to_vec(), TargetBinning::None),
            SelectionTarget::Values(v) => (quartile_classes(v), TargetBinning::Quartile),
        };
        if rows.len() != labels.len() {
            return Err(PreprocessError::LengthMismatch(rows.len(), labels.len()));
        }
        let dim = rows.first().map(Vec::len).ok_or(PreprocessError::Empty)?;
        let mut scores = Vec::with_capacity(dim);
        let mut column = vec![0.0; rows.len()];
        for j in 0..dim {
            for (c, r) in column.iter_mut().zip(rows) {
                if r.len() != dim {
                    return Err(PreprocessError::DimensionMismatch { expected: dim, got: r.len() });
                }
                *c = r[j];
            }
            scores.push(mutual_information(&column, &labels, bins)?);
        }
        let mut selected: Vec<usize> = (0..dim).collect();
        selected.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(Self { scores, selected, bins, target_binning })
    }

    /// The top-`k` prefix of this ranking.
    pub fn truncate(&self, k: usize) -> Result<Self, PreprocessError> {
        if k > self.scores.len() {
            return Err(PreprocessError::KTooLarge { k, available: self.scores.len() });
        }
        Ok(Self { selected: self.selected[..k].to_vec(), ..self.clone() })
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.selected.iter().map(|&j| r[j]).collect()).collect()
    }
}

pub fn select_top_k(
    rows: &[Vec<f64>],
    target: SelectionTarget<'_>,
    k: usize,
    bins: usize,
) -> Result<MiSelector, PreprocessError> {
    let dim = rows.first().map_or(0, Vec::len);
    if k > dim {
        return Err(PreprocessError::KTooLarge { k, available: dim });
    }
    MiSelector::rank(rows, target, bins)?.truncate(k)
}

/// `x + u·(neighbor − x)` for a given `u`.
pub fn interpolate_at(x: &[f64], neighbor: &[f64], u: f64) -> Vec<f64> {
    x.iter().zip(neighbor).map(|(a, b)| a + u * (b - a)).collect()
}

/// A random point on the segment from `x` to `neighbor`.
pub fn smote_interpolate<R: Rng>(x: &[f64], neighbor: &[f64], rng: &mut R) -> Result<Vec<f64>, PreprocessError> {
    if x.len() != neighbor.len() {
        return Err(PreprocessError::DimensionMismatch { expected: x.len(), got: neighbor.len() });
    }
    let u: f64 = rng.random();
    Ok(interpolate_at(x, neighbor, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteConfig {
    /// Minority neighbours used for interpolation.
    pub k_generate: usize,
    /// Neighbours used to classify a sample as in danger.
    pub m_danger: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_generate: 5, m_danger: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteOutput {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Number of original rows; synthetic rows follow them.
    pub original: usize,
    /// Classes whose danger set was empty, oversampled with plain SMOTE.
    pub fallback_classes: Vec<usize>,
    pub danger_counts: Vec<(usize, usize)>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Indices of the `k` nearest rows to `rows[i]` among `candidates`, nearest
/// first, ties by index.
fn nearest(rows: &[Vec<f64>], i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (sq_dist(&rows[i], &rows[j]), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Borderline-SMOTE1. Each class smaller than the largest is grown to the
/// largest class's size. A minority sample is in danger when at least half,
/// but not all, of its `m_danger` nearest neighbours (over all classes)
/// belong to other classes; synthetic rows are interpolated from danger
/// samples, in round-robin order, towards one of their `k_generate` nearest
/// same-class neighbours. Original rows are returned unchanged, first.
pub fn borderline_smote(rows: &[Vec<f64>], labels: &[usize], cfg: SmoteConfig) -> Result<SmoteOutput, PreprocessError> {
    if cfg.k_generate == 0 {
        return Err(PreprocessError::BadConfig("k_generate must be at least 1"));
    }
    if cfg.m_danger < cfg.k_generate {
        return Err(PreprocessError::BadConfig("m_danger must be at least k_generate"));
    }
    if rows.len() != labels.len() {
        return Err(PreprocessError::LengthMismatch(rows.len(), labels.len()));
    }
    let dim = rows.first().map(Vec::len).ok_or(PreprocessError::Empty)?;
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(PreprocessError::DimensionMismatch { expected: dim, got: r.len() });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let majority = members.iter().map(Vec::len).max().unwrap_or(0);
    for (class, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < majority && m.len() < 2 {
            return Err(PreprocessError::TooFewMinority { class, count: m.len() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = SmoteOutput {
        rows: rows.to_vec(),
        labels: labels.to_vec(),
        original: rows.len(),
        fallback_classes: Vec::new(),
        danger_counts: Vec::new(),
    };
    let everyone: Vec<usize> = (0..rows.len()).collect();
    let m = cfg.m_danger.min(rows.len() - 1);
    for (class, own) in members.iter().enumerate() {
        if own.is_empty() || own.len() == majority {
            continue;
        }
        let mut danger: Vec<usize> = own
            .iter()
            .copied()
            .filter(|&i| {
                let others = nearest(rows, i, &everyone, m).iter().filter(|&&j| labels[j] != class).count();
                2 * others >= m && others < m
            })
            .collect();
        out.danger_counts.push((class, danger.len()));
        if danger.is_empty() {
            out.fallback_classes.push(class);
            danger = own.clone();
        }
        let k = cfg.k_generate.min(own.len() - 1);
        let neighbours: Vec<Vec<usize>> = danger.iter().map(|&i| nearest(rows, i, own, k)).collect();
        for step in 0..majority - own.len() {
            let slot = step % danger.len();
            let pick = neighbours[slot][rng.random_range(0..neighbours[slot].len())];
            let synthetic = smote_interpolate(&rows[danger[slot]], &rows[pick], &mut rng)?;
            out.rows.push(synthetic);
            out.labels.push(class);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_basic() {
        let rows = vec![vec![10.0, 3.0], vec![20.0, 3.0]];
        let masks = vec![vec![false; 2]; 2];
        let s = Standardizer::fit(&rows, &masks, vec![]).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (15.0, 5.0));
        assert!(s.constant[1]);
        let z = s.transform(&[vec![20.0, 7.0]], &[vec![false, false]]).unwrap();
        assert_eq!(z[0], vec![1.0, 0.0]);
        let z = s.transform(&[vec![0.0, 0.0]], &[vec![true, false]]).unwrap();
        assert_eq!(z[0][0], 0.0);
        assert!(matches!(
            s.transform(&[vec![1.0]], &[vec![false]]),
            Err(PreprocessError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn standardizer_ignores_masked_values() {
        let rows = vec![vec![10.0], vec![20.0], vec![1e9]];
        let masks = vec![vec![false], vec![false], vec![true]];
        let s = Standardizer::fit(&rows, &masks, vec![]).unwrap();
        assert_eq!(s.mean[0], 15.0);
    }

    #[test]
    fn mi_perfect_separation_is_ln2() {
        let x: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 1.0 }).collect();
        let y: Vec<usize> = (0..100).map(|i| usize::from(i >= 50)).collect();
        let mi = mutual_information(&x, &y, 10).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12, "{mi}");
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let mi = mutual_information(&x, &y, 10).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12, "{mi}");
    }

    #[test]
    fn mi_constant_target_is_zero() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(mutual_information(&x, &[0; 20], 10).unwrap(), 0.0);
        assert!(matches!(mutual_information(&x, &[0; 3], 10), Err(PreprocessError::LengthMismatch(20, 3))));
    }

    #[test]
    fn equal_frequency_bins_merge_ties() {
        let b = equal_frequency_bins(&[1.0, 1.0, 1.0, 1.0, 2.0, 3.0], 3);
        assert_eq!(b[0], b[3]);
        assert!(b[5] > b[4] || b[4] > b[0]);
        let b = equal_frequency_bins(&(0..100).map(f64::from).collect::<Vec<_>>(), 10);
        for bin in 0..10 {
            assert_eq!(b.iter().filter(|&&v| v == bin).count(), 10);
        }
    }

    #[test]
    fn select_top_k_ties_and_limits() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let y = (i % 2) as f64;
                vec![((i * 7) % 11) as f64, y, y, ((i * 3) % 5) as f64]
            })
            .collect();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let sel = select_top_k(&rows, SelectionTarget::Classes(&y), 4, 10).unwrap();
        assert_eq!(&sel.selected[..2], &[1, 2]);
        let mut all = sel.selected.clone();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(matches!(
            select_top_k(&rows, SelectionTarget::Classes(&y), 5, 10),
            Err(PreprocessError::KTooLarge { k: 5, available: 4 })
        ));
    }

    #[test]
    fn interpolation_endpoints() {
        let x = [1.0, 2.0];
        let n = [3.0, -2.0];
        assert_eq!(interpolate_at(&x, &n, 0.0), x.to_vec());
        assert_eq!(interpolate_at(&x, &n, 1.0), n.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = smote_interpolate(&x, &n, &mut rng).unwrap();
        let d = |a: &[f64], b: &[f64]| sq_dist(a, b).sqrt();
        assert!((d(&out, &x) + d(&out, &n) - d(&x, &n)).abs() < 1e-9);
        assert!(smote_interpolate(&x, &[1.0], &mut rng).is_err());
    }

    fn blobs(n_a: usize, n_b: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_a {
            rows.push(vec![i as f64 * 0.1, (i % 3) as f64 * 0.1]);
            labels.push(0);
        }
        for i in 0..n_b {
            rows.push(vec![0.35 + i as f64 * 0.1, 0.05 + (i % 2) as f64 * 0.1]);
            labels.push(1);
        }
        (rows, labels)
    }

    #[test]
    fn smote_balances_and_keeps_originals() {
        let (rows, labels) = blobs(10, 6);
        let out = borderline_smote(&rows, &labels, SmoteConfig::default()).unwrap();
        assert_eq!(out.labels.iter().filter(|&&c| c == 0).count(), 10);
        assert_eq!(out.labels.iter().filter(|&&c| c == 1).count(), 10);
        assert_eq!(&out.rows[..16], rows.as_slice());
        assert_eq!(&out.labels[..16], labels.as_slice());
        let again = borderline_smote(&rows, &labels, SmoteConfig::default()).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn surrounded_minority_sample_is_noise_not_danger() {
        // one minority point deep inside the majority cloud, the rest far away
        let mut rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 4) as f64, (i / 4) as f64]).collect();
        let mut labels = vec![0; 12];
        rows.push(vec![1.5, 1.0]);
        labels.push(1);
        for i in 0..5 {
            rows.push(vec![50.0 + i as f64, 50.0]);
            labels.push(1);
        }
        let cfg = SmoteConfig { k_generate: 2, m_danger: 4, seed: 3 };
        let out = borderline_smote(&rows, &labels, cfg).unwrap();
        // far points only see each other (safe); the inner point sees four
        // majority neighbours (noise). No danger samples remain.
        assert_eq!(out.danger_counts, vec![(1, 0)]);
        assert_eq!(out.fallback_classes, vec![1]);
    }

    #[test]
    fn too_few_minority() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let err = borderline_smote(&rows, &[0, 0, 1], SmoteConfig::default()).unwrap_err();
        assert_eq!(err, PreprocessError::TooFewMinority { class: 1, count: 1 });
    }

    #[test]
    fn multiclass_balances_each_class() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let labels: Vec<usize> = (0..20).map(|i| if i < 12 { 0 } else if i < 17 { 1 } else { 2 }).collect();
        let out = borderline_smote(&rows, &labels, SmoteConfig::default()).unwrap();
        for c in 0..3 {
            assert_eq!(out.labels.iter().filter(|&&l| l == c).count(), 12);
        }
    }
}
