use serde::{Deserialize, Serialize};

/// Gaussian naive Bayes with per-class means, variances and log-priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_priors: Vec<f64>,
}

impl GaussianNb {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, var_floor: f64) -> Self {
        let dim = x[0].len();
        let mut counts = vec![0usize; n_classes];
        let mut means = vec![vec![0.0; dim]; n_classes];
        for (row, &c) in x.iter().zip(y) {
            counts[c] += 1;
            for (m, v) in means[c].iter_mut().zip(row) {
                *m += v;
            }
        }
        for (m, &n) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        let mut variances = vec![vec![0.0; dim]; n_classes];
        for (row, &c) in x.iter().zip(y) {
            for j in 0..dim {
                variances[c][j] += (row[j] - means[c][j]).powi(2);
            }
        }
        for (v, &n) in variances.iter_mut().zip(&counts) {
            v.iter_mut().for_each(|s| *s = *s / n.max(1) as f64 + var_floor);
        }
        let total = x.len() as f64;
        let log_priors = counts
            .iter()
            .map(|&n| if n == 0 { f64::NEG_INFINITY } else { (n as f64 / total).ln() })
            .collect();
        Self { means, variances, log_priors }
    }

    /// Unnormalised log posterior for each class.
    pub fn log_posterior(&self, row: &[f64]) -> Vec<f64> {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.log_priors
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(prior, (mu, var))| {
                prior
                    + row
                        .iter()
                        .zip(mu.iter().zip(var))
                        .map(|(x, (m, v))| -0.5 * (ln_2pi + v.ln()) - (x - m).powi(2) / (2.0 * v))
                        .sum::<f64>()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::argmax_first;

    #[test]
    fn equal_evidence_picks_first_class() {
        // mirror-image classes, probe at the midpoint
        let x = vec![vec![-1.0], vec![-3.0], vec![1.0], vec![3.0]];
        let nb = GaussianNb::fit(&x, &[0, 0, 1, 1], 2, 1e-9);
        let lp = nb.log_posterior(&[0.0]);
        assert_eq!(lp[0], lp[1]);
        assert_eq!(argmax_first(&lp), 0);
    }

    #[test]
    fn variance_floor_applies_to_constant_feature() {
        let x = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 5.0], vec![1.0, 6.0]];
        let nb = GaussianNb::fit(&x, &[0, 0, 1, 1], 2, 1e-9);
        assert_eq!(nb.variances[0][0], 1e-9);
        assert!(nb.log_posterior(&[1.0, 0.5]).iter().all(|v| v.is_finite()));
    }
}
