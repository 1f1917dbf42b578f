//! A small deterministic neural engine in double precision: dense,
//! convolutional, batch-norm, dropout and recurrent layers, trained with
//! SGD or Adam on softmax cross-entropy or squared error.

mod arch;
mod layers;
mod reshape;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arch::{build_architecture, ArchKind, ArchOptions, Head};
pub use layers::{orthogonal, softmax, Act, Cache, Layer, LayerSpec, Phase, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
pub use reshape::{is_composite, sequence_shape, square_side, to_sequence, to_square_image};

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("input of length {n} is too short (need at least {min})")]
    InputTooShort { n: usize, min: usize },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NeuralError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NeuralError::ShapeMismatch(format!("shape {shape:?} vs {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of the leading axis.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let per = self.shape[1..].iter().product::<usize>().max(1);
        self.data.chunks_exact(per)
    }
}

/// How a flat feature vector of length `len` becomes the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputLayout {
    Vector { len: usize },
    /// First `side²` values as `[1, side, side]`.
    Image { len: usize, side: usize },
    /// First `steps·width` values as `[steps, width]`.
    Sequence { len: usize, steps: usize, width: usize },
}

impl InputLayout {
    pub fn len(&self) -> usize {
        match *self {
            InputLayout::Vector { len } | InputLayout::Image { len, .. } | InputLayout::Sequence { len, .. } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        match *self {
            InputLayout::Vector { len } => vec![len],
            InputLayout::Image { side, .. } => vec![1, side, side],
            InputLayout::Sequence { steps, width, .. } => vec![steps, width],
        }
    }

    /// Stack rows into a batch tensor, truncating each to the layout.
    pub fn batch(&self, rows: &[Vec<f64>]) -> Result<Tensor, NeuralError> {
        let shape = self.shape();
        let used: usize = shape.iter().product();
        let mut data = Vec::with_capacity(rows.len() * used);
        for r in rows {
            if r.len() != self.len() {
                return Err(NeuralError::ShapeMismatch(format!("row of {} values, expected {}", r.len(), self.len())));
            }
            data.extend_from_slice(&r[..used]);
        }
        let mut full = vec![rows.len()];
        full.extend(shape);
        Tensor::new(full, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputLayout,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl NetworkSpec {
    /// Validates shape compatibility and the head, returning the output shape.
    pub fn validate(&self) -> Result<Vec<usize>, NeuralError> {
        let mut shape = self.input.shape();
        if shape.iter().product::<usize>() == 0 {
            return Err(NeuralError::InvalidSpec("empty input".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            shape = l
                .output_shape(&shape)
                .ok_or_else(|| NeuralError::InvalidSpec(format!("layer {i} ({l:?}) cannot take shape {shape:?}")))?;
        }
        let softmaxes = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Activation { act: Act::Softmax }))
            .count();
        let terminal_softmax = matches!(self.layers.last(), Some(LayerSpec::Activation { act: Act::Softmax }));
        match (softmaxes, terminal_softmax) {
            (1, true) if shape[0] >= 2 => Ok(shape),
            (0, false) if matches!(self.layers.last(), Some(LayerSpec::Dense { output: 1, .. })) => Ok(shape),
            _ => Err(NeuralError::InvalidSpec(
                "expected a single terminal softmax or a linear scalar head".into(),
            )),
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Activation { act: Act::Softmax }))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

/// Output and per-layer caches of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub output: Tensor,
    pub caches: Vec<Cache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, NeuralError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec.layers.iter().map(|l| Layer::init(l.clone(), &mut rng)).collect();
        Ok(Self { spec, layers })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Vec::len).sum()
    }

    pub fn forward(&self, x: &Tensor, phase: Phase, rng: &mut ChaCha8Rng) -> Result<Trace, NeuralError> {
        let mut expected = vec![x.shape.first().copied().unwrap_or(0)];
        expected.extend(self.spec.input.shape());
        if x.shape != expected {
            return Err(NeuralError::ShapeMismatch(format!("input {:?}, expected {expected:?}", x.shape)));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, cache) = layer.forward(&cur, phase, rng)?;
            if !next.is_finite() {
                return Err(NeuralError::NonFiniteActivation { layer: i });
            }
            caches.push(cache);
            cur = next;
        }
        Ok(Trace { output: cur, caches })
    }

    /// Eval-phase forward pass; does not touch any state.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, Phase::Eval, &mut rng)?.output)
    }

    /// Mean loss of a finished forward pass: cross-entropy on the softmax
    /// output, or squared error on the scalar output.
    pub fn loss(&self, output: &Tensor, target: Target<'_>) -> Result<f64, NeuralError> {
        let n = output.shape[0];
        match target {
            Target::Classes(y) => {
                check_len(y.len(), n)?;
                let k = output.shape[1];
                Ok(-y.iter().enumerate().map(|(i, &c)| output.data[i * k + c].max(1e-300).ln()).sum::<f64>()
                    / n as f64)
            }
            Target::Values(y) => {
                check_len(y.len(), n)?;
                Ok(output.data.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n as f64)
            }
        }
    }

    /// Parameter gradients of the mean loss, layer by layer. A terminal
    /// softmax is folded into the cross-entropy (gradient `p − onehot`).
    pub fn backward(&self, trace: &Trace, target: Target<'_>) -> Result<Vec<Vec<Vec<f64>>>, NeuralError> {
        let out = &trace.output;
        let n = out.shape[0] as f64;
        let (mut grad, mut top) = match target {
            Target::Classes(y) => {
                check_len(y.len(), out.shape[0])?;
                let k = out.shape[1];
                let mut g = out.data.clone();
                for (i, &c) in y.iter().enumerate() {
                    g[i * k + c] -= 1.0;
                }
                g.iter_mut().for_each(|v| *v /= n);
                (Tensor { shape: out.shape.clone(), data: g }, self.layers.len() - 1)
            }
            Target::Values(y) => {
                check_len(y.len(), out.shape[0])?;
                let g = out.data.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / n).collect();
                (Tensor { shape: out.shape.clone(), data: g }, self.layers.len())
            }
        };
        let mut grads = vec![Vec::new(); self.layers.len()];
        while top > 0 {
            top -= 1;
            let (dx, g) = self.layers[top].backward(&trace.caches[top], &grad);
            grads[top] = g;
            grad = dx;
        }
        Ok(grads)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn check_len(got: usize, expected: usize) -> Result<(), NeuralError> {
    if got != expected {
        return Err(NeuralError::ShapeMismatch(format!("{got} targets for {expected} outputs")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { optimizer: Optimizer::ADAM, learning_rate: 1e-3, epochs: 100, batch_size: 16, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.epochs == 0 || self.batch_size == 0 {
            return Err(NeuralError::BadConfig("learning rate, epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter optimizer state.
struct Moments {
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    t: i32,
}

impl Moments {
    fn new(net: &Network) -> Self {
        let zeros: Vec<Vec<Vec<f64>>> =
            net.layers.iter().map(|l| l.params.iter().map(|p| vec![0.0; p.len()]).collect()).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, net: &mut Network, grads: &[Vec<Vec<f64>>], cfg: &TrainConfig) {
        self.t += 1;
        let lr = cfg.learning_rate;
        for (li, layer) in net.layers.iter_mut().enumerate() {
            for (pi, p) in layer.params.iter_mut().enumerate() {
                let g = &grads[li][pi];
                match cfg.optimizer {
                    Optimizer::Sgd => p.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g),
                    Optimizer::Adam { beta1, beta2, eps } => {
                        let (m, v) = (&mut self.m[li][pi], &mut self.v[li][pi]);
                        let c1 = 1.0 - beta1.powi(self.t);
                        let c2 = 1.0 - beta2.powi(self.t);
                        for k in 0..p.len() {
                            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                            p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

/// A trained network plus target scaling for regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub network: Network,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

impl TrainedNetwork {
    pub fn predict_classes(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>, NeuralError> {
        let out = self.network.predict(&self.network.spec.input.batch(rows)?)?;
        Ok(out.rows().map(crate::ml::argmax_first).collect())
    }

    pub fn predict_values(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, NeuralError> {
        let out = self.network.predict(&self.network.spec.input.batch(rows)?)?;
        Ok(out.data.iter().map(|v| self.target_mean + self.target_scale * v).collect())
    }

    pub fn write_loss_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss")?;
        for (e, l) in self.history.iter().enumerate() {
            writeln!(w, "{},{l}", e + 1)?;
        }
        Ok(())
    }
}

/// Mini-batch training with a seeded shuffle each epoch. Regression targets
/// are standardised internally.
pub fn train_network(
    spec: NetworkSpec,
    cfg: &TrainConfig,
    rows: &[Vec<f64>],
    target: Target<'_>,
) -> Result<TrainedNetwork, NeuralError> {
    cfg.validate()?;
    let mut net = Network::new(spec)?;
    let x = net.spec.input.batch(rows)?;
    let n = rows.len();
    let (mean, scale, scaled): (f64, f64, Vec<f64>) = match target {
        Target::Values(v) => {
            check_len(v.len(), n)?;
            if net.spec.is_classifier() {
                return Err(NeuralError::InvalidSpec("classifier head with real targets".into()));
            }
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = (v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let scale = if sd > 0.0 { sd } else { 1.0 };
            (mean, scale, v.iter().map(|t| (t - mean) / scale).collect())
        }
        Target::Classes(c) => {
            check_len(c.len(), n)?;
            if !net.spec.is_classifier() {
                return Err(NeuralError::InvalidSpec("scalar head with class targets".into()));
            }
            let k = net.spec.validate()?[0];
            if let Some(&bad) = c.iter().find(|&&c| c >= k) {
                return Err(NeuralError::ShapeMismatch(format!("class {bad} with {k} outputs")));
            }
            (0.0, 1.0, Vec::new())
        }
    };
    let per = x.data.len() / n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut moments = Moments::new(&net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut shape = x.shape.clone();
            shape[0] = batch.len();
            let data = batch.iter().flat_map(|&i| x.data[i * per..(i + 1) * per].iter().copied()).collect();
            let xb = Tensor { shape, data };
            let classes: Vec<usize>;
            let values: Vec<f64>;
            let tb = match target {
                Target::Classes(c) => {
                    classes = batch.iter().map(|&i| c[i]).collect();
                    Target::Classes(&classes)
                }
                Target::Values(_) => {
                    values = batch.iter().map(|&i| scaled[i]).collect();
                    Target::Values(&values)
                }
            };
            let trace = match net.forward(&xb, Phase::Train, &mut rng) {
                Ok(t) => t,
                Err(NeuralError::NonFiniteActivation { .. }) => return Err(NeuralError::Divergence { epoch }),
                Err(e) => return Err(e),
            };
            let loss = net.loss(&trace.output, tb)?;
            if !loss.is_finite() {
                return Err(NeuralError::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            let grads = net.backward(&trace, tb)?;
            moments.step(&mut net, &grads, cfg);
            for (layer, cache) in net.layers.iter_mut().zip(&trace.caches) {
                layer.update_running(cache);
            }
        }
        let mean_loss = total / n as f64;
        if !mean_loss.is_finite() || net.layers.iter().flat_map(|l| &l.params).flatten().any(|w| !w.is_finite()) {
            return Err(NeuralError::Divergence { epoch });
        }
        history.push(mean_loss);
    }
    Ok(TrainedNetwork { network: net, target_mean: mean, target_scale: scale, history })
}

/// Worst disagreement between backpropagated gradients and central finite
/// differences over every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `|a − n| / max(|a|, |n|, 1e-6)`
    pub max_relative_error: f64,
    pub layer: usize,
    pub param: usize,
    pub index: usize,
}

/// Compare gradients against `(L(w+ε) − L(w−ε)) / 2ε`. Each loss evaluation
/// reseeds the dropout stream with `seed`, so masks are shared.
pub fn gradient_check(
    net: &Network,
    x: &Tensor,
    target: Target<'_>,
    phase: Phase,
    seed: u64,
    eps: f64,
) -> Result<GradientCheck, NeuralError> {
    let eval = |n: &Network| -> Result<f64, NeuralError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        n.loss(&n.forward(x, phase, &mut rng)?.output, target)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = net.forward(x, phase, &mut rng)?;
    let grads = net.backward(&trace, target)?;
    let mut probe = net.clone();
    let mut worst = GradientCheck { max_relative_error: 0.0, layer: 0, param: 0, index: 0 };
    for (li, layer) in net.layers.iter().enumerate() {
        for (pi, p) in layer.params.iter().enumerate() {
            for k in 0..p.len() {
                let w = p[k];
                probe.layers[li].params[pi][k] = w + eps;
                let up = eval(&probe)?;
                probe.layers[li].params[pi][k] = w - eps;
                let down = eval(&probe)?;
                probe.layers[li].params[pi][k] = w;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads[li][pi][k];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                if rel > worst.max_relative_error {
                    worst = GradientCheck { max_relative_error: rel, layer: li, param: pi, index: k };
                }
            }
        }
    }
    Ok(worst)
}
