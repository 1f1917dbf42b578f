//! Linear SVM (hinge loss) and SVR (ε-insensitive loss) trained by
//! epoch-shuffled stochastic subgradient descent on
//! `λ‖w‖² + mean loss`, with step `lr / (1 + lr·λ·t)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_first, dot, Encoded, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl SvmParams {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self {
            lambda: spec.get("lambda"),
            lr: spec.get("lr"),
            epochs: spec.get_usize("epochs"),
            epsilon: spec.get("epsilon"),
            seed: spec.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn score(&self, row: &[f64]) -> f64 {
        dot(&self.w, row) + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinearSvm {
    /// Positive side is class 1.
    Binary(Hyperplane),
    /// One hyperplane per class, one-vs-rest.
    OneVsRest(Vec<Hyperplane>),
    /// Predicts `offset + score`.
    Regressor { plane: Hyperplane, offset: f64 },
}

#[derive(Clone, Copy)]
enum Loss {
    Hinge,
    EpsInsensitive(f64),
}

fn train(x: &[Vec<f64>], targets: &[f64], loss: Loss, p: SvmParams) -> Hyperplane {
    let dim = x[0].len();
    let mut plane = Hyperplane { w: vec![0.0; dim], b: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0.0;
    for _ in 0..p.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = p.lr / (1.0 + p.lr * p.lambda * t);
            t += 1.0;
            let s = plane.score(&x[i]);
            // dloss/dscore
            let g = match loss {
                Loss::Hinge => {
                    if targets[i] * s < 1.0 {
                        -targets[i]
                    } else {
                        0.0
                    }
                }
                Loss::EpsInsensitive(eps) => {
                    let r = targets[i] - s;
                    if r > eps {
                        -1.0
                    } else if r < -eps {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            for (wj, xj) in plane.w.iter_mut().zip(&x[i]) {
                *wj -= eta * (2.0 * p.lambda * *wj + g * xj);
            }
            plane.b -= eta * g;
        }
    }
    plane
}

impl LinearSvm {
    pub(crate) fn fit(x: &[Vec<f64>], y: &Encoded, p: SvmParams) -> Self {
        match y {
            Encoded::Classes(c, 2) => {
                let t: Vec<f64> = c.iter().map(|&k| if k == 1 { 1.0 } else { -1.0 }).collect();
                LinearSvm::Binary(train(x, &t, Loss::Hinge, p))
            }
            Encoded::Classes(c, k) => LinearSvm::OneVsRest(
                (0..*k)
                    .map(|class| {
                        let t: Vec<f64> = c.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
                        train(x, &t, Loss::Hinge, p)
                    })
                    .collect(),
            ),
            Encoded::Values(v) => {
                let offset = v.iter().sum::<f64>() / v.len() as f64;
                let centred: Vec<f64> = v.iter().map(|y| y - offset).collect();
                LinearSvm::Regressor { plane: train(x, &centred, Loss::EpsInsensitive(p.epsilon), p), offset }
            }
        }
    }

    pub fn predict_class(&self, row: &[f64]) -> usize {
        match self {
            LinearSvm::Binary(h) => usize::from(h.score(row) > 0.0),
            LinearSvm::OneVsRest(hs) => argmax_first(&hs.iter().map(|h| h.score(row)).collect::<Vec<_>>()),
            LinearSvm::Regressor { .. } => unreachable!("regressor used for classification"),
        }
    }

    pub fn predict_value(&self, row: &[f64]) -> f64 {
        match self {
            LinearSvm::Regressor { plane, offset } => offset + plane.score(row),
            _ => unreachable!("classifier used for regression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::ml::{fit, Algorithm, ModelSpec, TaskKind, Targets};

    #[test]
    fn svr_recovers_linear_trend() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 - 30.0) / 10.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 25.0 + 2.0 * r[0]).collect();
        let spec = ModelSpec::new(Algorithm::LinearSvm, TaskKind::Regress)
            .unwrap()
            .with("lambda", 1e-4)
            .unwrap()
            .with("epochs", 200.0)
            .unwrap();
        let m = fit(&spec, &x, Targets::Values(&y)).unwrap();
        let p = m.predict(&[vec![1.0]]).unwrap();
        assert!((p.values().unwrap()[0] - 27.0).abs() < 0.3, "{p:?}");
    }

    #[test]
    fn one_vs_rest_three_classes() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, centre) in [(0usize, -6.0), (1, 0.0), (2, 6.0)] {
            for i in 0..10 {
                x.push(vec![centre + (i as f64 - 4.5) * 0.1, 0.0]);
                y.push(c);
            }
        }
        let spec = ModelSpec::new(Algorithm::LinearSvm, TaskKind::Classify).unwrap();
        let m = fit(&spec, &x, Targets::Classes(&y)).unwrap();
        let p = m.predict(&[vec![-6.0, 0.0], vec![6.0, 0.0]]).unwrap();
        assert_eq!(p.classes().unwrap(), &[0, 2]);
    }
}
