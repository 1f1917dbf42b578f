//! CART: greedy binary splits on Gini impurity (classification) or squared
//! error (regression).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Class proportions, or a single mean for regression.
    Leaf { value: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Clone, Copy)]
enum Criterion<'a> {
    Gini { y: &'a [usize], n_classes: usize, w: &'a [f64] },
    Variance { y: &'a [f64] },
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Tree {
    pub fn fit_classifier(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        weights: Option<&[f64]>,
        params: TreeParams,
    ) -> Self {
        let ones;
        let w = match weights {
            Some(w) => w,
            None => {
                ones = vec![1.0; y.len()];
                &ones
            }
        };
        let mut tree = Tree { nodes: Vec::new() };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, Criterion::Gini { y, n_classes, w }, idx, 0, params);
        tree
    }

    pub fn fit_regressor(x: &[Vec<f64>], y: &[f64], params: TreeParams) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, Criterion::Variance { y }, idx, 0, params);
        tree
    }

    fn grow(&mut self, x: &[Vec<f64>], crit: Criterion<'_>, idx: Vec<usize>, depth: usize, p: TreeParams) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: leaf_value(crit, &idx) });
        let (impurity, _) = node_impurity(crit, &idx);
        if depth >= p.max_depth || idx.len() < 2 * p.min_samples_leaf.max(1) || impurity <= 1e-12 {
            return id;
        }
        let Some(best) = best_split(x, crit, &idx, p.min_samples_leaf.max(1)) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][best.feature] <= best.threshold);
        let left = self.grow(x, crit, l, depth + 1, p);
        let right = self.grow(x, crit, r, depth + 1, p);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        id
    }

    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn leaf_value(crit: Criterion<'_>, idx: &[usize]) -> Vec<f64> {
    match crit {
        Criterion::Gini { y, n_classes, w } => {
            let mut counts = vec![0.0; n_classes];
            for &i in idx {
                counts[y[i]] += w[i];
            }
            let total: f64 = counts.iter().sum();
            if total > 0.0 {
                counts.iter_mut().for_each(|c| *c /= total);
            }
            counts
        }
        Criterion::Variance { y } => {
            vec![idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len().max(1) as f64]
        }
    }
}

/// (weighted impurity total, weight) of a node: Gini·W or SSE.
fn node_impurity(crit: Criterion<'_>, idx: &[usize]) -> (f64, f64) {
    match crit {
        Criterion::Gini { y, n_classes, w } => {
            let mut counts = vec![0.0; n_classes];
            for &i in idx {
                counts[y[i]] += w[i];
            }
            let total: f64 = counts.iter().sum();
            (gini_total(&counts, total), total)
        }
        Criterion::Variance { y } => {
            let n = idx.len() as f64;
            let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
            (idx.iter().map(|&i| (y[i] - mean).powi(2)).sum(), n)
        }
    }
}

/// `W · gini` = `W − Σ c² / W`.
fn gini_total(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    total - counts.iter().map(|c| c * c).sum::<f64>() / total
}

fn best_split(x: &[Vec<f64>], crit: Criterion<'_>, idx: &[usize], min_leaf: usize) -> Option<Best> {
    let (parent, _) = node_impurity(crit, idx);
    let dim = x[idx[0]].len();
    let n = idx.len();
    let mut best: Option<Best> = None;
    let mut order = idx.to_vec();
    for f in 0..dim {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut scan = Scan::new(crit, &order);
        for pos in 0..n - 1 {
            scan.move_left(order[pos]);
            let (lo, hi) = (x[order[pos]][f], x[order[pos + 1]][f]);
            if lo == hi || pos + 1 < min_leaf || n - pos - 1 < min_leaf {
                continue;
            }
            let gain = parent - scan.children_impurity();
            if best.as_ref().is_none_or(|b| gain > b.gain + 1e-12 * parent.abs().max(1.0)) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Best { feature: f, threshold, gain });
            }
        }
    }
    best
}

/// Running left/right statistics while sweeping sorted samples.
enum Scan<'a> {
    Gini { y: &'a [usize], w: &'a [f64], left: Vec<f64>, right: Vec<f64>, wl: f64, wr: f64 },
    Variance { y: &'a [f64], nl: f64, sl: f64, ql: f64, nr: f64, sr: f64, qr: f64 },
}

impl<'a> Scan<'a> {
    fn new(crit: Criterion<'a>, order: &[usize]) -> Self {
        match crit {
            Criterion::Gini { y, n_classes, w } => {
                let mut right = vec![0.0; n_classes];
                let mut wr = 0.0;
                for &i in order {
                    right[y[i]] += w[i];
                    wr += w[i];
                }
                Scan::Gini { y, w, left: vec![0.0; n_classes], right, wl: 0.0, wr }
            }
            Criterion::Variance { y } => {
                let (mut sr, mut qr) = (0.0, 0.0);
                for &i in order {
                    sr += y[i];
                    qr += y[i] * y[i];
                }
                Scan::Variance { y, nl: 0.0, sl: 0.0, ql: 0.0, nr: order.len() as f64, sr, qr }
            }
        }
    }

    fn move_left(&mut self, i: usize) {
        match self {
            Scan::Gini { y, w, left, right, wl, wr } => {
                left[y[i]] += w[i];
                right[y[i]] -= w[i];
                *wl += w[i];
                *wr -= w[i];
            }
            Scan::Variance { y, nl, sl, ql, nr, sr, qr } => {
                let v = y[i];
                *nl += 1.0;
                *sl += v;
                *ql += v * v;
                *nr -= 1.0;
                *sr -= v;
                *qr -= v * v;
            }
        }
    }

    fn children_impurity(&self) -> f64 {
        match self {
            Scan::Gini { left, right, wl, wr, .. } => gini_total(left, *wl) + gini_total(right, *wr),
            Scan::Variance { nl, sl, ql, nr, sr, qr, .. } => {
                (ql - sl * sl / nl).max(0.0) + (qr - sr * sr / nr).max(0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::{argmax_first, testdata};

    fn accuracy(t: &Tree, x: &[Vec<f64>], y: &[usize]) -> f64 {
        x.iter().zip(y).filter(|(r, c)| argmax_first(t.leaf_value(r)) == **c).count() as f64 / y.len() as f64
    }

    #[test]
    fn depth_one_cannot_fit_xor() {
        let (x, y) = testdata::xor(10);
        let t = Tree::fit_classifier(&x, &y, 2, None, TreeParams { max_depth: 1, min_samples_leaf: 1 });
        assert!(accuracy(&t, &x, &y) <= 0.75);
        // exhaustive: every axis threshold on the corners leaves one side mixed
        for f in 0..2 {
            for thr in [-0.5, 0.5, 1.5] {
                let mut counts = [[0usize; 2]; 2];
                for (r, c) in x.iter().zip(&y) {
                    counts[usize::from(r[f] > thr)][*c] += 1;
                }
                let correct: usize = counts.iter().map(|s| s[0].max(s[1])).sum();
                assert!(correct as f64 / y.len() as f64 <= 0.75);
            }
        }
    }

    #[test]
    fn depth_two_fits_unbalanced_xor() {
        // unequal quadrant counts give the first split a positive gain
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (a, b, n) in [(0.0, 0.0, 12), (0.0, 1.0, 10), (1.0, 0.0, 10), (1.0, 1.0, 8)] {
            for _ in 0..n {
                x.push(vec![a, b]);
                y.push(usize::from(a != b));
            }
        }
        let t = Tree::fit_classifier(&x, &y, 2, None, TreeParams { max_depth: 2, min_samples_leaf: 1 });
        assert_eq!(accuracy(&t, &x, &y), 1.0);
    }

    #[test]
    fn regression_tree_piecewise_constant() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 5.0 }).collect();
        let t = Tree::fit_regressor(&x, &y, TreeParams { max_depth: 3, min_samples_leaf: 1 });
        assert_eq!(t.depth(), 1);
        assert_eq!(t.leaf_value(&[3.0]), &[1.0]);
        assert_eq!(t.leaf_value(&[3.6]), &[5.0]);
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y = [1, 0, 0, 0, 0, 0];
        let t = Tree::fit_classifier(&x, &y, 2, None, TreeParams { max_depth: 5, min_samples_leaf: 2 });
        fn leaves(t: &Tree, at: usize, x: &[Vec<f64>], idx: Vec<usize>) -> Vec<usize> {
            match &t.nodes[at] {
                Node::Leaf { .. } => vec![idx.len()],
                Node::Split { feature, threshold, left, right } => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][*feature] <= *threshold);
                    let mut out = leaves(t, *left, x, l);
                    out.extend(leaves(t, *right, x, r));
                    out
                }
            }
        }
        assert!(leaves(&t, 0, &x, (0..6).collect()).iter().all(|&n| n >= 2));
    }
}
