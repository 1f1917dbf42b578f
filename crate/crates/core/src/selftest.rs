//! Quick built-in checks: gradient checks on every layer family plus small
//! property and oracle suites. Used by `keydyn selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{iqr_filter, Flight, DEFAULT_IQR_K};
use crate::ingest::{Device, KeyEvent, Mode};
use crate::neural::{
    gradient_check, sequence_shape, square_side, Act, InputLayout, LayerSpec, Network, NetworkSpec, Phase, Target,
    Tensor,
};
use crate::preprocess::{borderline_smote, MiSelector, SelectionTarget, SmoteConfig, DEFAULT_MI_BINS};
use crate::protocol::{accuracy, kfold, mae, stratum_train_counts};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name, passed, detail: detail.into() }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor { shape, data: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

/// The five gradient-check networks: name, network, input, targets.
pub fn gradient_cases() -> Vec<(&'static str, Network, Tensor, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut case = |name, input: InputLayout, layers: Vec<LayerSpec>, batch: usize, classes: usize| {
        let mut shape = vec![batch];
        shape.extend(input.shape());
        let x = random_tensor(shape, &mut rng);
        let y = (0..batch).map(|i| i % classes).collect();
        let net = Network::new(NetworkSpec { input, layers, seed: 5 }).expect("valid network");
        (name, net, x, y)
    };
    let softmax = LayerSpec::Activation { act: Act::Softmax };
    vec![
        case(
            "dense",
            InputLayout::Vector { len: 6 },
            vec![
                LayerSpec::Dense { input: 6, output: 5 },
                LayerSpec::Activation { act: Act::Tanh },
                LayerSpec::Dense { input: 5, output: 3 },
                softmax.clone(),
            ],
            4,
            3,
        ),
        case(
            "conv2d+batchnorm",
            InputLayout::Image { len: 16, side: 4 },
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 3, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::BatchNorm { dim: 3 },
                LayerSpec::Activation { act: Act::Tanh },
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 48, output: 2 },
                softmax.clone(),
            ],
            3,
            2,
        ),
        case(
            "dropout stack",
            InputLayout::Vector { len: 5 },
            vec![
                LayerSpec::Dense { input: 5, output: 8 },
                LayerSpec::BatchNorm { dim: 8 },
                LayerSpec::Activation { act: Act::Tanh },
                LayerSpec::Dropout { rate: 0.3 },
                LayerSpec::Dense { input: 8, output: 2 },
                softmax.clone(),
            ],
            4,
            2,
        ),
        case(
            "rnn 2 steps",
            InputLayout::Sequence { len: 6, steps: 2, width: 3 },
            vec![LayerSpec::RnnStack { input: 3, layers: 2, hidden: 4 }, LayerSpec::Dense { input: 4, output: 2 }, softmax.clone()],
            3,
            2,
        ),
        case(
            "lstm 2 steps",
            InputLayout::Sequence { len: 6, steps: 2, width: 3 },
            vec![LayerSpec::LstmStack { input: 3, layers: 2, hidden: 4 }, LayerSpec::Dense { input: 4, output: 2 }, softmax],
            3,
            2,
        ),
    ]
}

fn gradient_checks() -> Vec<Check> {
    gradient_cases()
        .into_iter()
        .map(|(name, net, x, y)| match gradient_check(&net, &x, Target::Classes(&y), Phase::Train, 3, 1e-5) {
            Ok(g) => check(
                name,
                g.max_relative_error <= GRADIENT_TOLERANCE,
                format!("max relative error {:.2e}", g.max_relative_error),
            ),
            Err(e) => check(name, false, e.to_string()),
        })
        .collect()
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize) -> Vec<KeyEvent> {
    let mut press = 0;
    (0..n)
        .map(|_| {
            press += rng.random_range(0..200);
            let hold = rng.random_range(0..300);
            KeyEvent {
                user_id: "u".into(),
                device: Device::Desktop,
                mode: Mode::Free,
                key: "a".into(),
                press_ms: press,
                release_ms: press + hold,
            }
        })
        .collect()
}

fn digraph_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..2000 {
        let s = random_stream(&mut rng, 8);
        for w in s.windows(2) {
            let f = |fl: Flight| fl.of(&w[0], &w[1]);
            let hold2 = (w[1].release_ms - w[1].press_ms) as f64;
            if f(Flight::F2) - f(Flight::F1) != hold2 || f(Flight::F4) - f(Flight::F3) != hold2 {
                bad += 1;
            }
        }
    }
    check("digraph identities", bad == 0, format!("{bad} violations in 14000 pairs"))
}

fn iqr_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(4) * 1000.0).collect();
        let once = iqr_filter(&v, DEFAULT_IQR_K).expect("non-empty");
        let twice = iqr_filter(&once, DEFAULT_IQR_K).expect("non-empty");
        if once != twice || once.iter().any(|x| !v.contains(x)) || once.is_empty() {
            bad += 1;
        }
    }
    check("iqr idempotence and subset", bad == 0, format!("{bad} of 1000 lists failed"))
}

fn reshape_contracts() -> Check {
    let mut bad = Vec::new();
    for n in 1..=2000usize {
        match square_side(n, false) {
            Ok(s) if s * s <= n && n < (s + 1) * (s + 1) => {}
            _ => bad.push(format!("square {n}")),
        }
        if n >= 4 {
            match sequence_shape(n, false) {
                Ok((a, b)) if a * b <= n && a >= 2 && a <= b => {}
                _ => bad.push(format!("sequence {n}")),
            }
        }
    }
    check("reshape contracts", bad.is_empty(), format!("{} failures {:?}", bad.len(), bad.iter().take(3).collect::<Vec<_>>()))
}

fn on_segment(p: &[f64], a: &[f64], b: &[f64]) -> bool {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let t = if dd == 0.0 { 0.0 } else { p.iter().zip(a).zip(&d).map(|((p, a), d)| (p - a) * d).sum::<f64>() / dd };
    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
        return false;
    }
    p.iter().zip(a).zip(&d).all(|((p, a), d)| (p - (a + t * d)).abs() <= 1e-9)
}

fn smote_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for trial in 0..20 {
        let (n0, n1) = (rng.random_range(12..30), rng.random_range(3..10));
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, n) in [(0usize, n0), (1, n1)] {
            for _ in 0..n {
                rows.push(vec![rng.random_range(0.0..1.0) + c as f64 * 0.5, rng.random_range(0.0..1.0)]);
                labels.push(c);
            }
        }
        let cfg = SmoteConfig { k_generate: 3, m_danger: 6, seed: trial };
        let Ok(out) = borderline_smote(&rows, &labels, cfg) else {
            bad += 1;
            continue;
        };
        let counts = [0, 1].map(|c| out.labels.iter().filter(|&&l| l == c).count());
        let minority: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).collect();
        let synthetic_ok = out.rows[out.original..]
            .iter()
            .all(|p| minority.iter().any(|a| minority.iter().any(|b| on_segment(p, a, b))));
        if counts[0] != counts[1] || out.rows[..out.original] != rows[..] || !synthetic_ok {
            bad += 1;
        }
    }
    check("borderline-smote properties", bad == 0, format!("{bad} of 20 sets failed"))
}

fn mi_recovery() -> Check {
    let mut hits = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..400 {
            let c = rng.random_range(0..2usize);
            let mut r: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            r[7] = c as f64 + rng.random_range(-0.6..0.6);
            rows.push(r);
            y.push(c);
        }
        let sel = MiSelector::rank(&rows, SelectionTarget::Classes(&y), DEFAULT_MI_BINS).expect("valid matrix");
        hits += usize::from(sel.selected[0] == 7);
    }
    check("mi planted feature", hits >= 9, format!("ranked first in {hits}/10"))
}

fn protocol_arithmetic() -> Check {
    let users: Vec<String> = (0..82).map(|i| format!("u{i}")).collect();
    let sizes: Vec<usize> = kfold(&users, 5, 0).map(|f| f.iter().map(|f| f.val_users.len()).collect()).unwrap_or_default();
    let ok = accuracy(&[1, 1, 0, 0], &[1, 0, 0, 0]).ok() == Some(0.75)
        && mae(&[20.0, 30.0], &[22.0, 27.0]).ok() == Some(2.5)
        && stratum_train_counts(&[72, 45]).iter().sum::<usize>() == 81
        && sizes == [17, 17, 16, 16, 16];
    check("metrics, split and folds", ok, format!("fold sizes {sizes:?}"))
}

pub fn run_all() -> Vec<Check> {
    let mut out = gradient_checks();
    out.extend([
        digraph_identities(),
        iqr_properties(),
        reshape_contracts(),
        smote_properties(),
        mi_recovery(),
        protocol_arithmetic(),
    ]);
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
