//! Multi-class AdaBoost (SAMME) over depth-1 trees.

use serde::{Deserialize, Serialize};

use super::argmax_first;
use super::tree::{Tree, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoost {
    pub stumps: Vec<Tree>,
    pub alphas: Vec<f64>,
    pub n_classes: usize,
}

const STUMP: TreeParams = TreeParams { max_depth: 1, min_samples_leaf: 1 };

impl AdaBoost {
    /// Runs up to `rounds` boosting rounds. Stops early when a stump is no
    /// better than chance (weighted error ≥ 1 − 1/C, discarded unless it is
    /// the first) or fits the weighted data perfectly (kept, then stop).
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, rounds: usize) -> Self {
        let n = x.len();
        let mut w = vec![1.0 / n as f64; n];
        let mut model = AdaBoost { stumps: Vec::new(), alphas: Vec::new(), n_classes };
        let chance = 1.0 - 1.0 / n_classes as f64;
        let class_term = (n_classes as f64 - 1.0).ln();
        for _ in 0..rounds {
            let stump = Tree::fit_classifier(x, y, n_classes, Some(&w), STUMP);
            let miss: Vec<bool> = x.iter().zip(y).map(|(r, c)| argmax_first(stump.leaf_value(r)) != *c).collect();
            let total: f64 = w.iter().sum();
            let err = w.iter().zip(&miss).filter(|(_, m)| **m).map(|(w, _)| w).sum::<f64>() / total;
            if err >= chance {
                if model.stumps.is_empty() {
                    model.stumps.push(stump);
                    model.alphas.push(1.0);
                }
                break;
            }
            if err <= 1e-12 {
                model.stumps.push(stump);
                model.alphas.push(1.0);
                break;
            }
            let alpha = ((1.0 - err) / err).ln() + class_term;
            for (wi, m) in w.iter_mut().zip(&miss) {
                if *m {
                    *wi *= alpha.exp();
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            model.stumps.push(stump);
            model.alphas.push(alpha);
        }
        model
    }

    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n_classes];
        for (stump, a) in self.stumps.iter().zip(&self.alphas) {
            s[argmax_first(stump.leaf_value(row))] += a;
        }
        s
    }

    /// Training error after each round, for diagnostics.
    pub fn staged_errors(&self, x: &[Vec<f64>], y: &[usize]) -> Vec<f64> {
        let mut scores = vec![vec![0.0; self.n_classes]; x.len()];
        let mut out = Vec::new();
        for (stump, a) in self.stumps.iter().zip(&self.alphas) {
            for (s, r) in scores.iter_mut().zip(x) {
                s[argmax_first(stump.leaf_value(r))] += a;
            }
            let wrong = scores.iter().zip(y).filter(|(s, c)| argmax_first(s) != **c).count();
            out.push(wrong as f64 / x.len() as f64);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_stump_is_a_step_function() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..10).map(|i| usize::from(i >= 6)).collect();
        let m = AdaBoost::fit(&x, &y, 2, 50);
        assert_eq!(m.stumps.len(), 1);
        let predict = |v: f64| argmax_first(&m.scores(&[v]));
        assert_eq!(predict(5.49), 0);
        assert_eq!(predict(5.51), 1);
        assert_eq!(predict(-100.0), 0);
        assert_eq!(predict(100.0), 1);
    }

    #[test]
    fn exponential_loss_bound_non_increasing_on_separable_data() {
        // diagonal boundary: separable, but not by any single stump
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let (a, b) = (i as f64, j as f64);
                if (a + b - 11.0).abs() < 1.5 {
                    continue;
                }
                x.push(vec![a, b]);
                y.push(usize::from(a + b > 11.0));
            }
        }
        let m = AdaBoost::fit(&x, &y, 2, 60);
        // 0-1 error may blip; the exponential-loss bound on it may not
        let mut f = vec![0.0; x.len()];
        let mut losses = Vec::new();
        for (stump, a) in m.stumps.iter().zip(&m.alphas) {
            for (fi, r) in f.iter_mut().zip(&x) {
                *fi += if argmax_first(stump.leaf_value(r)) == 1 { *a } else { -*a };
            }
            let l = f.iter().zip(&y).map(|(fi, &c)| (-0.5 * fi * if c == 1 { 1.0 } else { -1.0 }).exp()).sum::<f64>();
            losses.push(l / x.len() as f64);
        }
        assert!(losses.len() > 1);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{losses:?}");
        }
        let errs = m.staged_errors(&x, &y);
        for (e, l) in errs.iter().zip(&losses) {
            assert!(e <= l);
        }
        assert_eq!(*errs.last().unwrap(), 0.0);
    }
}
