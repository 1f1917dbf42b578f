use serde::{Deserialize, Serialize};

use super::Encoded;

/// k-nearest neighbours under Euclidean distance. Classification takes a
/// majority vote (ties to the earlier class); regression averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    pub n_classes: usize,
    pub values: Vec<f64>,
}

impl Knn {
    pub(crate) fn fit(x: &[Vec<f64>], y: &Encoded, k: usize) -> Self {
        let (classes, n_classes, values) = match y {
            Encoded::Classes(c, n) => (c.clone(), *n, Vec::new()),
            Encoded::Values(v) => (Vec::new(), 0, v.clone()),
        };
        Self { k, x: x.to_vec(), classes, n_classes, values }
    }

    /// Training indices of the k nearest rows, nearest first, ties by index.
    pub fn neighbours(&self, row: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, t)| (t.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k.min(self.x.len())).map(|(_, i)| i).collect()
    }

    pub fn predict_class(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for i in self.neighbours(row) {
            votes[self.classes[i]] += 1;
        }
        let mut best = 0;
        for (c, v) in votes.iter().enumerate() {
            if *v > votes[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict_value(&self, row: &[f64]) -> f64 {
        let n = self.neighbours(row);
        n.iter().map(|&i| self.values[i]).sum::<f64>() / n.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use crate::ml::{fit, Algorithm, ModelSpec, TaskKind, Targets};

    /// Exhaustive oracle: sort every training point by distance, vote.
    fn brute_force(train: &[(f64, f64, usize)], q: (f64, f64), k: usize) -> usize {
        let mut d: Vec<(f64, usize, usize)> = train
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c))| ((a - q.0).powi(2) + (b - q.1).powi(2), i, c))
            .collect();
        d.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        let ones = d[..k].iter().filter(|t| t.2 == 1).count();
        usize::from(ones * 2 > k)
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let pts = [(0.0, 0.0, 0), (1.0, 0.2, 0), (0.3, 1.1, 1), (2.0, 2.0, 1), (-1.0, 1.5, 1)];
        let x: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        let y: Vec<usize> = pts.iter().map(|p| p.2).collect();
        let spec = ModelSpec::new(Algorithm::Knn, TaskKind::Classify).unwrap().with("k", 3.0).unwrap();
        let m = fit(&spec, &x, Targets::Classes(&y)).unwrap();
        for i in -4..=4 {
            for j in -4..=4 {
                let q = (i as f64 * 0.6, j as f64 * 0.55);
                let p = m.predict(&[vec![q.0, q.1]]).unwrap();
                assert_eq!(p.classes().unwrap()[0], brute_force(&pts, q, 3), "{q:?}");
            }
        }
    }

    #[test]
    fn regression_averages_neighbours() {
        let x = vec![vec![0.0], vec![1.0], vec![10.0]];
        let spec = ModelSpec::new(Algorithm::Knn, TaskKind::Regress).unwrap().with("k", 2.0).unwrap();
        let m = fit(&spec, &x, Targets::Values(&[2.0, 4.0, 100.0])).unwrap();
        assert_eq!(m.predict(&[vec![0.2]]).unwrap().values().unwrap(), &[3.0]);
    }
}
