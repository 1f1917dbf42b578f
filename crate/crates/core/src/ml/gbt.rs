//! Second-order gradient-boosted regression trees. Leaf weight is
//! `−G / (H + λ)`; a split is kept when
//! `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ > 0`.

use serde::{Deserialize, Serialize};

use super::{argmax_first, Encoded, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtParams {
    pub trees: usize,
    pub eta: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub gamma: f64,
}

impl GbtParams {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self {
            trees: spec.get_usize("trees"),
            eta: spec.get("eta"),
            max_depth: spec.get_usize("max_depth"),
            lambda: spec.get("lambda_reg"),
            min_child_weight: spec.get("min_child_weight"),
            gamma: spec.get("gamma"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GTree {
    pub nodes: Vec<GNode>,
}

impl GTree {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                GNode::Leaf(w) => return w,
                GNode::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// One additive model: `base + η Σ tree(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub base: f64,
    pub eta: f64,
    pub trees: Vec<GTree>,
}

impl Ensemble {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base + self.eta * self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Gbt {
    /// Logistic margin for class 1.
    Binary(Ensemble),
    /// One logistic ensemble per class.
    OneVsRest(Vec<Ensemble>),
    Regressor(Ensemble),
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    g: &'a [f64],
    h: &'a [f64],
    p: GbtParams,
    nodes: Vec<GNode>,
    /// row indices sorted by (value, index), one list per feature
    sorted: &'a [Vec<usize>],
    member: Vec<bool>,
}

impl Builder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.p.lambda)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let g: f64 = idx.iter().map(|&i| self.g[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.h[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(GNode::Leaf(-g / (h + self.p.lambda)));
        if depth >= self.p.max_depth || idx.len() < 2 {
            return id;
        }
        let parent = self.score(g, h);
        let dim = self.x[idx[0]].len();
        let mut best: Option<(usize, f64, f64)> = None;
        for &i in &idx {
            self.member[i] = true;
        }
        let mut order = Vec::with_capacity(idx.len());
        for f in 0..dim {
            order.clear();
            order.extend(self.sorted[f].iter().copied().filter(|&i| self.member[i]));
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..order.len() - 1 {
                gl += self.g[order[pos]];
                hl += self.h[order[pos]];
                let (lo, hi) = (self.x[order[pos]][f], self.x[order[pos + 1]][f]);
                if lo == hi || hl < self.p.min_child_weight || h - hl < self.p.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(g - gl, h - hl) - parent) - self.p.gamma;
                if gain > 1e-12 && best.is_none_or(|(_, _, b)| gain > b + 1e-12) {
                    let mut t = lo + (hi - lo) / 2.0;
                    if t >= hi {
                        t = lo;
                    }
                    best = Some((f, t, gain));
                }
            }
        }
        for &i in &idx {
            self.member[i] = false;
        }
        let Some((feature, threshold, _)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = GNode::Split { feature, threshold, left, right };
        id
    }
}

fn boost(x: &[Vec<f64>], base: f64, p: GbtParams, grad: impl Fn(usize, f64) -> (f64, f64)) -> Ensemble {
    let mut ens = Ensemble { base, eta: p.eta, trees: Vec::with_capacity(p.trees) };
    let mut margin = vec![base; x.len()];
    let dim = x.first().map_or(0, Vec::len);
    let sorted: Vec<Vec<usize>> = (0..dim)
        .map(|f| {
            let mut o: Vec<usize> = (0..x.len()).collect();
            o.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            o
        })
        .collect();
    for _ in 0..p.trees {
        let (g, h): (Vec<f64>, Vec<f64>) = margin.iter().enumerate().map(|(i, &m)| grad(i, m)).unzip();
        let mut b = Builder { x, g: &g, h: &h, p, nodes: Vec::new(), sorted: &sorted, member: vec![false; x.len()] };
        b.grow((0..x.len()).collect(), 0);
        let tree = GTree { nodes: b.nodes };
        for (m, row) in margin.iter_mut().zip(x) {
            *m += p.eta * tree.eval(row);
        }
        ens.trees.push(tree);
    }
    ens
}

fn logistic(x: &[Vec<f64>], t: &[f64], p: GbtParams) -> Ensemble {
    let pos = t.iter().sum::<f64>() / t.len() as f64;
    let pos = pos.clamp(1e-6, 1.0 - 1e-6);
    let base = (pos / (1.0 - pos)).ln();
    boost(x, base, p, |i, m| {
        let q = sigmoid(m);
        (q - t[i], (q * (1.0 - q)).max(1e-16))
    })
}

impl Gbt {
    pub(crate) fn fit(x: &[Vec<f64>], y: &Encoded, p: GbtParams) -> Self {
        match y {
            Encoded::Classes(c, 2) => {
                let t: Vec<f64> = c.iter().map(|&k| (k == 1) as u8 as f64).collect();
                Gbt::Binary(logistic(x, &t, p))
            }
            Encoded::Classes(c, k) => Gbt::OneVsRest(
                (0..*k)
                    .map(|class| {
                        let t: Vec<f64> = c.iter().map(|&l| (l == class) as u8 as f64).collect();
                        logistic(x, &t, p)
                    })
                    .collect(),
            ),
            Encoded::Values(v) => {
                let base = v.iter().sum::<f64>() / v.len() as f64;
                Gbt::Regressor(boost(x, base, p, |i, m| (m - v[i], 1.0)))
            }
        }
    }

    /// Raw additive scores: one per class (binary gives `[−m, m]`), or the
    /// regression value.
    pub fn margins(&self, row: &[f64]) -> Vec<f64> {
        match self {
            Gbt::Binary(e) => {
                let m = e.margin(row);
                vec![-m, m]
            }
            Gbt::OneVsRest(es) => es.iter().map(|e| e.margin(row)).collect(),
            Gbt::Regressor(e) => vec![e.margin(row)],
        }
    }

    pub fn predict_class(&self, row: &[f64]) -> usize {
        match self {
            Gbt::Binary(e) => usize::from(e.margin(row) > 0.0),
            _ => argmax_first(&self.margins(row)),
        }
    }

    pub fn predict_value(&self, row: &[f64]) -> f64 {
        match self {
            Gbt::Regressor(e) => e.margin(row),
            _ => unreachable!("classifier used for regression"),
        }
    }
}
