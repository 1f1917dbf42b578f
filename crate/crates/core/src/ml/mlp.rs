//! One hidden layer of rectified units, trained by full-batch gradient
//! descent (softmax cross-entropy or squared error).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Encoded, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpParams {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl MlpParams {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self {
            hidden: spec.get_usize("hidden"),
            lr: spec.get("lr"),
            epochs: spec.get_usize("epochs"),
            l2: spec.get("l2"),
            seed: spec.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// hidden × input
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// output × hidden
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub regression: bool,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-limit..limit)).collect()).collect()
}

impl Mlp {
    pub(crate) fn fit(x: &[Vec<f64>], y: &Encoded, p: MlpParams) -> Self {
        let dim = x[0].len();
        let (outputs, regression) = match y {
            Encoded::Classes(_, k) => (*k, false),
            Encoded::Values(_) => (1, true),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut m = Mlp {
            w1: glorot(&mut rng, p.hidden, dim),
            b1: vec![0.0; p.hidden],
            w2: glorot(&mut rng, outputs, p.hidden),
            b2: vec![0.0; outputs],
            regression,
            y_mean: 0.0,
            y_scale: 1.0,
        };
        let targets: Vec<Vec<f64>> = match y {
            Encoded::Classes(c, k) => c
                .iter()
                .map(|&l| (0..*k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
                .collect(),
            Encoded::Values(v) => {
                let n = v.len() as f64;
                m.y_mean = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|t| (t - m.y_mean).powi(2)).sum::<f64>() / n).sqrt();
                m.y_scale = if sd > 0.0 { sd } else { 1.0 };
                v.iter().map(|t| vec![(t - m.y_mean) / m.y_scale]).collect()
            }
        };
        let n = x.len() as f64;
        let h = p.hidden;
        for _ in 0..p.epochs {
            let mut gw1 = vec![vec![0.0; dim]; h];
            let mut gb1 = vec![0.0; h];
            let mut gw2 = vec![vec![0.0; h]; outputs];
            let mut gb2 = vec![0.0; outputs];
            for (row, t) in x.iter().zip(&targets) {
                let pre: Vec<f64> = m.w1.iter().zip(&m.b1).map(|(w, b)| super::dot(w, row) + b).collect();
                let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let out = m.output(&act);
                // dL/dz for softmax-CE and for squared error (½ factor folded in)
                let delta: Vec<f64> = out.iter().zip(t).map(|(o, t)| (o - t) / n).collect();
                let mut dact = vec![0.0; h];
                for (k, d) in delta.iter().enumerate() {
                    gb2[k] += d;
                    for j in 0..h {
                        gw2[k][j] += d * act[j];
                        dact[j] += d * m.w2[k][j];
                    }
                }
                for j in 0..h {
                    if pre[j] > 0.0 {
                        gb1[j] += dact[j];
                        for (g, xi) in gw1[j].iter_mut().zip(row) {
                            *g += dact[j] * xi;
                        }
                    }
                }
            }
            for j in 0..h {
                for (w, g) in m.w1[j].iter_mut().zip(&gw1[j]) {
                    *w -= p.lr * (g + p.l2 * *w);
                }
                m.b1[j] -= p.lr * gb1[j];
            }
            for k in 0..outputs {
                for (w, g) in m.w2[k].iter_mut().zip(&gw2[k]) {
                    *w -= p.lr * (g + p.l2 * *w);
                }
                m.b2[k] -= p.lr * gb2[k];
            }
        }
        m
    }

    fn output(&self, act: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self.w2.iter().zip(&self.b2).map(|(w, b)| super::dot(w, act) + b).collect();
        if self.regression {
            return z;
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Class probabilities, or the standardised regression output.
    pub fn forward(&self, row: &[f64]) -> Vec<f64> {
        let act: Vec<f64> = self.w1.iter().zip(&self.b1).map(|(w, b)| (super::dot(w, row) + b).max(0.0)).collect();
        self.output(&act)
    }

    pub fn predict_value(&self, row: &[f64]) -> f64 {
        self.y_mean + self.y_scale * self.forward(row)[0]
    }
}

#[cfg(test)]
mod tests {
    use crate::ml::{fit, testdata, Algorithm, ModelSpec, TaskKind, Targets};

    #[test]
    fn learns_xor() {
        let (x, y) = testdata::xor(5);
        let x: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 2.0 * v - 1.0).collect()).collect();
        let spec = ModelSpec::new(Algorithm::Mlp1, TaskKind::Classify)
            .unwrap()
            .with("epochs", 2000.0)
            .unwrap()
            .with("lr", 0.5)
            .unwrap();
        let m = fit(&spec, &x, Targets::Classes(&y)).unwrap();
        assert_eq!(m.predict(&x).unwrap().classes().unwrap(), y.as_slice());
    }

    #[test]
    fn regression_fits_quadratic_roughly() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 - 20.0) / 10.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] * r[0] + 1.0).collect();
        let spec = ModelSpec::new(Algorithm::Mlp1, TaskKind::Regress)
            .unwrap()
            .with("epochs", 3000.0)
            .unwrap()
            .with("lr", 0.1)
            .unwrap();
        let m = fit(&spec, &x, Targets::Values(&y)).unwrap();
        let p = m.predict(&x).unwrap();
        let mae = p.values().unwrap().iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
        assert!(mae < 0.5, "{mae}");
    }
}
