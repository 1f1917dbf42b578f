//! Layer descriptors, parameter layout, and forward/backward passes on
//! batch-major tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{NeuralError, Tensor};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Act {
    Relu,
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Shapes below exclude the leading batch dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `[input] → [output]`
    Dense { input: usize, output: usize },
    /// `[in_ch, h, w] → [out_ch, h', w']`, cross-correlation.
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    /// Normalises axis 0 of `[dim]` or `[dim, h, w]`.
    BatchNorm { dim: usize },
    Dropout { rate: f64 },
    Activation { act: Act },
    /// `[steps, input] → [hidden]`, last state of the top layer.
    RnnStack { input: usize, layers: usize, hidden: usize },
    LstmStack { input: usize, layers: usize, hidden: usize },
    Flatten,
}

impl LayerSpec {
    pub fn output_shape(&self, shape: &[usize]) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { input, output } => (shape == [input]).then(|| vec![output]),
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                let &[c, h, w] = shape else { return None };
                if c != in_ch || stride == 0 || kernel == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return None;
                }
                Some(vec![out_ch, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1])
            }
            LayerSpec::BatchNorm { dim } => {
                (matches!(shape.len(), 1 | 3) && shape[0] == dim).then(|| shape.to_vec())
            }
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate).then(|| shape.to_vec()),
            LayerSpec::Activation { act: Act::Softmax } => (shape.len() == 1).then(|| shape.to_vec()),
            LayerSpec::Activation { .. } => Some(shape.to_vec()),
            LayerSpec::RnnStack { input, layers, hidden } | LayerSpec::LstmStack { input, layers, hidden } => {
                let &[steps, d] = shape else { return None };
                (steps >= 1 && d == input && layers >= 1 && hidden >= 1).then(|| vec![hidden])
            }
            LayerSpec::Flatten => Some(vec![shape.iter().product()]),
        }
    }

    /// Shapes of the trainable parameter arrays, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { input, output } => vec![vec![output, input], vec![output]],
            LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                vec![vec![out_ch, in_ch, kernel, kernel], vec![out_ch]]
            }
            LayerSpec::BatchNorm { dim } => vec![vec![dim], vec![dim]],
            LayerSpec::RnnStack { input, layers, hidden } => (0..layers)
                .flat_map(|l| {
                    let d = if l == 0 { input } else { hidden };
                    [vec![hidden, d], vec![hidden, hidden], vec![hidden]]
                })
                .collect(),
            LayerSpec::LstmStack { input, layers, hidden } => (0..layers)
                .flat_map(|l| {
                    let d = if l == 0 { input } else { hidden };
                    [vec![4 * hidden, d], vec![4 * hidden, hidden], vec![4 * hidden]]
                })
                .collect(),
            LayerSpec::Dropout { .. } | LayerSpec::Activation { .. } | LayerSpec::Flatten => Vec::new(),
        }
    }
}

/// A layer with its parameters. LSTM gate blocks are ordered i, f, g, o.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Vec<f64>>,
    /// BatchNorm running mean and variance; empty otherwise.
    pub state: Vec<Vec<f64>>,
}

fn glorot(rng: &mut ChaCha8Rng, len: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// Square orthogonal matrix: Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let p: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

impl Layer {
    pub fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut params = Vec::new();
        let mut state = Vec::new();
        match spec {
            LayerSpec::Dense { input, output } => {
                params.push(glorot(rng, input * output, input, output));
                params.push(vec![0.0; output]);
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                let area = kernel * kernel;
                params.push(glorot(rng, out_ch * in_ch * area, in_ch * area, out_ch * area));
                params.push(vec![0.0; out_ch]);
            }
            LayerSpec::BatchNorm { dim } => {
                params.push(vec![1.0; dim]);
                params.push(vec![0.0; dim]);
                state.push(vec![0.0; dim]);
                state.push(vec![1.0; dim]);
            }
            LayerSpec::RnnStack { input, layers, hidden } => {
                for l in 0..layers {
                    let d = if l == 0 { input } else { hidden };
                    params.push(glorot(rng, hidden * d, d, hidden));
                    params.push(orthogonal(rng, hidden));
                    params.push(vec![0.0; hidden]);
                }
            }
            LayerSpec::LstmStack { input, layers, hidden } => {
                for l in 0..layers {
                    let d = if l == 0 { input } else { hidden };
                    params.push(glorot(rng, 4 * hidden * d, d, 4 * hidden));
                    params.push((0..4).flat_map(|_| orthogonal(rng, hidden)).collect());
                    let mut b = vec![0.0; 4 * hidden];
                    b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
                    params.push(b);
                }
            }
            LayerSpec::Dropout { .. } | LayerSpec::Activation { .. } | LayerSpec::Flatten => {}
        }
        Layer { spec, params, state }
    }

    pub fn forward(&self, x: &Tensor, phase: Phase, rng: &mut ChaCha8Rng) -> Result<(Tensor, Cache), NeuralError> {
        let n = x.shape[0];
        match self.spec {
            LayerSpec::Dense { input, output } => {
                let (w, b) = (&self.params[0], &self.params[1]);
                let mut y = Vec::with_capacity(n * output);
                for row in x.data.chunks_exact(input) {
                    for o in 0..output {
                        y.push(b[o] + dot(&w[o * input..(o + 1) * input], row));
                    }
                }
                Ok((Tensor { shape: vec![n, output], data: y }, Cache::Input(x.clone())))
            }
            LayerSpec::Conv2d { .. } => {
                let g = ConvGeom::new(&self.spec, &x.shape);
                Ok((g.forward(x, &self.params[0], &self.params[1]), Cache::Input(x.clone())))
            }
            LayerSpec::BatchNorm { dim } => {
                let spatial: usize = x.shape[2..].iter().product();
                let m = (n * spatial) as f64;
                let (mean, var) = match phase {
                    Phase::Train => {
                        let mut mean = vec![0.0; dim];
                        let mut var = vec![0.0; dim];
                        for_channels(&x.data, dim, spatial, |c, v| mean[c] += v);
                        mean.iter_mut().for_each(|v| *v /= m);
                        for_channels(&x.data, dim, spatial, |c, v| var[c] += (v - mean[c]).powi(2));
                        var.iter_mut().for_each(|v| *v /= m);
                        (mean, var)
                    }
                    Phase::Eval => (self.state[0].clone(), self.state[1].clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
                let (gamma, beta) = (&self.params[0], &self.params[1]);
                let mut xhat = x.data.clone();
                let mut y = x.data.clone();
                for (i, (h, o)) in xhat.iter_mut().zip(y.iter_mut()).enumerate() {
                    let c = (i / spatial) % dim;
                    *h = (*h - mean[c]) * inv_std[c];
                    *o = *h * gamma[c] + beta[c];
                }
                let train = phase == Phase::Train;
                Ok((Tensor { shape: x.shape.clone(), data: y }, Cache::Batch { xhat, inv_std, mean, var, train }))
            }
            LayerSpec::Dropout { rate } => {
                if phase == Phase::Eval || rate == 0.0 {
                    return Ok((x.clone(), Cache::Mask(None)));
                }
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> =
                    (0..x.data.len()).map(|_| if rng.random::<f64>() >= rate { keep } else { 0.0 }).collect();
                let data = x.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
                Ok((Tensor { shape: x.shape.clone(), data }, Cache::Mask(Some(mask))))
            }
            LayerSpec::Activation { act } => {
                let data = match act {
                    Act::Relu => x.data.iter().map(|v| v.max(0.0)).collect(),
                    Act::Tanh => x.data.iter().map(|v| v.tanh()).collect(),
                    Act::Softmax => {
                        let k = x.shape[1];
                        x.data.chunks_exact(k).flat_map(softmax).collect()
                    }
                };
                let y = Tensor { shape: x.shape.clone(), data };
                Ok((y.clone(), Cache::Output(y)))
            }
            LayerSpec::RnnStack { layers, hidden, .. } => Ok(self.recurrent_forward(x, layers, hidden, false)),
            LayerSpec::LstmStack { layers, hidden, .. } => Ok(self.recurrent_forward(x, layers, hidden, true)),
            LayerSpec::Flatten => {
                let per: usize = x.shape[1..].iter().product();
                Ok((Tensor { shape: vec![n, per], data: x.data.clone() }, Cache::Shape(x.shape.clone())))
            }
        }
    }

    /// Gradient w.r.t. the input, and w.r.t. each parameter array.
    pub fn backward(&self, cache: &Cache, dy: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        match (&self.spec, cache) {
            (&LayerSpec::Dense { input, output }, Cache::Input(x)) => {
                let w = &self.params[0];
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; output];
                let mut dx = vec![0.0; x.data.len()];
                for ((xr, dyr), dxr) in
                    x.data.chunks_exact(input).zip(dy.data.chunks_exact(output)).zip(dx.chunks_exact_mut(input))
                {
                    for (o, &g) in dyr.iter().enumerate() {
                        db[o] += g;
                        let wrow = &w[o * input..(o + 1) * input];
                        let dwrow = &mut dw[o * input..(o + 1) * input];
                        for i in 0..input {
                            dwrow[i] += g * xr[i];
                            dxr[i] += g * wrow[i];
                        }
                    }
                }
                (Tensor { shape: x.shape.clone(), data: dx }, vec![dw, db])
            }
            (LayerSpec::Conv2d { .. }, Cache::Input(x)) => {
                let g = ConvGeom::new(&self.spec, &x.shape);
                let (dx, dw, db) = g.backward(x, &self.params[0], dy);
                (dx, vec![dw, db])
            }
            (&LayerSpec::BatchNorm { dim }, Cache::Batch { xhat, inv_std, train, .. }) => {
                let gamma = &self.params[0];
                let spatial: usize = dy.shape[2..].iter().product();
                let m = (dy.shape[0] * spatial) as f64;
                let mut dgamma = vec![0.0; dim];
                let mut dbeta = vec![0.0; dim];
                for (i, (g, h)) in dy.data.iter().zip(xhat).enumerate() {
                    let c = (i / spatial) % dim;
                    dgamma[c] += g * h;
                    dbeta[c] += g;
                }
                let dx = dy
                    .data
                    .iter()
                    .zip(xhat)
                    .enumerate()
                    .map(|(i, (g, h))| {
                        let c = (i / spatial) % dim;
                        if *train {
                            // dxhat = g·γ; Σdxhat = γ·dβ; Σdxhat·xhat = γ·dγ
                            gamma[c] * inv_std[c] * (g - dbeta[c] / m - h * dgamma[c] / m)
                        } else {
                            gamma[c] * inv_std[c] * g
                        }
                    })
                    .collect();
                (Tensor { shape: dy.shape.clone(), data: dx }, vec![dgamma, dbeta])
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                let data = match mask {
                    Some(m) => dy.data.iter().zip(m).map(|(g, m)| g * m).collect(),
                    None => dy.data.clone(),
                };
                (Tensor { shape: dy.shape.clone(), data }, Vec::new())
            }
            (LayerSpec::Activation { act }, Cache::Output(y)) => {
                let data = match act {
                    Act::Relu => dy.data.iter().zip(&y.data).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect(),
                    Act::Tanh => dy.data.iter().zip(&y.data).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Act::Softmax => {
                        let k = y.shape[1];
                        y.data
                            .chunks_exact(k)
                            .zip(dy.data.chunks_exact(k))
                            .flat_map(|(p, g)| {
                                let s: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
                                p.iter().zip(g).map(move |(p, g)| p * (g - s))
                            })
                            .collect()
                    }
                };
                (Tensor { shape: dy.shape.clone(), data }, Vec::new())
            }
            (&LayerSpec::RnnStack { input, layers, hidden }, Cache::Recurrent(c)) => {
                self.recurrent_backward(c, dy, input, layers, hidden, false)
            }
            (&LayerSpec::LstmStack { input, layers, hidden }, Cache::Recurrent(c)) => {
                self.recurrent_backward(c, dy, input, layers, hidden, true)
            }
            (LayerSpec::Flatten, Cache::Shape(shape)) => {
                (Tensor { shape: shape.clone(), data: dy.data.clone() }, Vec::new())
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }

    /// Fold a training-phase batch's statistics into the running estimates.
    pub fn update_running(&mut self, cache: &Cache) {
        if let Cache::Batch { mean, var, train: true, .. } = cache {
            for (r, b) in self.state[0].iter_mut().zip(mean) {
                *r = BATCHNORM_MOMENTUM * *r + (1.0 - BATCHNORM_MOMENTUM) * b;
            }
            for (r, b) in self.state[1].iter_mut().zip(var) {
                *r = BATCHNORM_MOMENTUM * *r + (1.0 - BATCHNORM_MOMENTUM) * b;
            }
        }
    }

    fn recurrent_forward(&self, x: &Tensor, layers: usize, hidden: usize, lstm: bool) -> (Tensor, Cache) {
        let (n, steps) = (x.shape[0], x.shape[1]);
        let h = hidden;
        let mut cache = RecurrentCache { inputs: Vec::new(), hs: Vec::new(), cs: Vec::new(), gates: Vec::new() };
        let mut seq = x.data.clone();
        for l in 0..layers {
            let d = seq.len() / (n * steps);
            let (wx, wh, b) = (&self.params[3 * l], &self.params[3 * l + 1], &self.params[3 * l + 2]);
            let width = if lstm { 4 * h } else { h };
            let mut hs = vec![0.0; n * (steps + 1) * h];
            let mut cs = if lstm { vec![0.0; n * (steps + 1) * h] } else { Vec::new() };
            let mut gates = if lstm { vec![0.0; n * steps * width] } else { Vec::new() };
            let mut z = vec![0.0; width];
            for s in 0..n {
                for t in 0..steps {
                    let u = &seq[(s * steps + t) * d..(s * steps + t + 1) * d];
                    let base = s * (steps + 1) * h;
                    let (prev, next) = hs[base..base + (steps + 1) * h].split_at_mut((t + 1) * h);
                    let hp = &prev[t * h..];
                    for r in 0..width {
                        z[r] = b[r] + dot(&wx[r * d..(r + 1) * d], u) + dot(&wh[r * h..(r + 1) * h], hp);
                    }
                    let hn = &mut next[..h];
                    if lstm {
                        let g = &mut gates[(s * steps + t) * width..(s * steps + t + 1) * width];
                        for j in 0..h {
                            g[j] = sigmoid(z[j]);
                            g[h + j] = sigmoid(z[h + j]);
                            g[2 * h + j] = z[2 * h + j].tanh();
                            g[3 * h + j] = sigmoid(z[3 * h + j]);
                        }
                        let (cprev, cnext) = cs[base..base + (steps + 1) * h].split_at_mut((t + 1) * h);
                        let cp = &cprev[t * h..];
                        for j in 0..h {
                            let c = g[h + j] * cp[j] + g[j] * g[2 * h + j];
                            cnext[j] = c;
                            hn[j] = g[3 * h + j] * c.tanh();
                        }
                    } else {
                        for j in 0..h {
                            hn[j] = z[j].tanh();
                        }
                    }
                }
            }
            let mut out = vec![0.0; n * steps * h];
            for s in 0..n {
                let base = s * (steps + 1) * h;
                out[s * steps * h..(s + 1) * steps * h].copy_from_slice(&hs[base + h..base + (steps + 1) * h]);
            }
            cache.inputs.push(std::mem::replace(&mut seq, out));
            cache.hs.push(hs);
            cache.cs.push(cs);
            cache.gates.push(gates);
        }
        let last: Vec<f64> =
            (0..n).flat_map(|s| seq[((s + 1) * steps - 1) * h..(s + 1) * steps * h].iter().copied()).collect();
        (Tensor { shape: vec![n, h], data: last }, Cache::Recurrent(cache))
    }

    fn recurrent_backward(
        &self,
        c: &RecurrentCache,
        dy: &Tensor,
        input: usize,
        layers: usize,
        hidden: usize,
        lstm: bool,
    ) -> (Tensor, Vec<Vec<f64>>) {
        let h = hidden;
        let n = dy.shape[0];
        let steps = c.inputs[0].len() / (n * input);
        let width = if lstm { 4 * h } else { h };
        // incoming gradient on each step's output of the current layer
        let mut dout = vec![0.0; n * steps * h];
        for s in 0..n {
            dout[((s + 1) * steps - 1) * h..(s + 1) * steps * h].copy_from_slice(&dy.data[s * h..(s + 1) * h]);
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); 3 * layers];
        for l in (0..layers).rev() {
            let d = if l == 0 { input } else { h };
            let (wx, wh) = (&self.params[3 * l], &self.params[3 * l + 1]);
            let (u_all, hs) = (&c.inputs[l], &c.hs[l]);
            let mut dwx = vec![0.0; width * d];
            let mut dwh = vec![0.0; width * h];
            let mut db = vec![0.0; width];
            let mut du = vec![0.0; n * steps * d];
            let mut dz = vec![0.0; width];
            for s in 0..n {
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                for t in (0..steps).rev() {
                    let base = s * (steps + 1) * h;
                    let hp = &hs[base + t * h..base + (t + 1) * h];
                    let hn = &hs[base + (t + 1) * h..base + (t + 2) * h];
                    let dh: Vec<f64> =
                        (0..h).map(|j| dout[(s * steps + t) * h + j] + dh_next[j]).collect();
                    if lstm {
                        let g = &c.gates[l][(s * steps + t) * width..(s * steps + t + 1) * width];
                        let cp = &c.cs[l][base + t * h..base + (t + 1) * h];
                        let cn = &c.cs[l][base + (t + 1) * h..base + (t + 2) * h];
                        for j in 0..h {
                            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                            let tc = cn[j].tanh();
                            let dc = dh[j] * o * (1.0 - tc * tc) + dc_next[j];
                            dz[j] = dc * gg * i * (1.0 - i);
                            dz[h + j] = dc * cp[j] * f * (1.0 - f);
                            dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                            dz[3 * h + j] = dh[j] * tc * o * (1.0 - o);
                            dc_next[j] = dc * f;
                        }
                    } else {
                        for j in 0..h {
                            dz[j] = dh[j] * (1.0 - hn[j] * hn[j]);
                        }
                    }
                    let u = &u_all[(s * steps + t) * d..(s * steps + t + 1) * d];
                    let dus = &mut du[(s * steps + t) * d..(s * steps + t + 1) * d];
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    for (r, &g) in dz.iter().enumerate() {
                        db[r] += g;
                        let (wxr, dwxr) = (&wx[r * d..(r + 1) * d], &mut dwx[r * d..(r + 1) * d]);
                        for k in 0..d {
                            dwxr[k] += g * u[k];
                            dus[k] += g * wxr[k];
                        }
                        let (whr, dwhr) = (&wh[r * h..(r + 1) * h], &mut dwh[r * h..(r + 1) * h]);
                        for k in 0..h {
                            dwhr[k] += g * hp[k];
                            dh_next[k] += g * whr[k];
                        }
                    }
                }
            }
            grads[3 * l] = dwx;
            grads[3 * l + 1] = dwh;
            grads[3 * l + 2] = db;
            dout = du;
        }
        (Tensor { shape: vec![n, steps, input], data: dout }, grads)
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentCache {
    /// Per layer, its `[n, steps, d]` input sequence.
    inputs: Vec<Vec<f64>>,
    /// Per layer, hidden states `[n, steps + 1, h]` including the zero start.
    hs: Vec<Vec<f64>>,
    /// LSTM cell states, same layout as `hs`.
    cs: Vec<Vec<f64>>,
    /// LSTM post-activation gates `[n, steps, 4h]`.
    gates: Vec<Vec<f64>>,
}

/// Intermediates kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Batch { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64>, train: bool },
    Mask(Option<Vec<f64>>),
    Output(Tensor),
    Shape(Vec<usize>),
    Recurrent(RecurrentCache),
}

struct ConvGeom {
    n: usize,
    ic: usize,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(spec: &LayerSpec, shape: &[usize]) -> Self {
        let LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } = *spec else { unreachable!() };
        let (h, w) = (shape[2], shape[3]);
        ConvGeom {
            n: shape[0],
            ic: in_ch,
            oc: out_ch,
            k: kernel,
            stride,
            pad,
            h,
            w,
            oh: (h + 2 * pad - kernel) / stride + 1,
            ow: (w + 2 * pad - kernel) / stride + 1,
        }
    }

    /// Output positions `i` whose tap `u` lands inside the input, with the
    /// input coordinate.
    fn taps(&self, u: usize, len: usize, out_len: usize) -> impl Iterator<Item = (usize, usize)> + use<> {
        let (stride, pad) = (self.stride, self.pad);
        (0..out_len).filter_map(move |i| {
            let r = (i * stride + u).checked_sub(pad)?;
            (r < len).then_some((i, r))
        })
    }

    fn forward(&self, x: &Tensor, wts: &[f64], bias: &[f64]) -> Tensor {
        let (hw, ohw, k) = (self.h * self.w, self.oh * self.ow, self.k);
        let mut y = vec![0.0; self.n * self.oc * ohw];
        for s in 0..self.n {
            for o in 0..self.oc {
                let out = &mut y[(s * self.oc + o) * ohw..(s * self.oc + o + 1) * ohw];
                out.iter_mut().for_each(|v| *v = bias[o]);
                for c in 0..self.ic {
                    let xin = &x.data[(s * self.ic + c) * hw..(s * self.ic + c + 1) * hw];
                    for u in 0..k {
                        for v in 0..k {
                            let wt = wts[((o * self.ic + c) * k + u) * k + v];
                            for (i, r) in self.taps(u, self.h, self.oh) {
                                for (j, col) in self.taps(v, self.w, self.ow) {
                                    out[i * self.ow + j] += wt * xin[r * self.w + col];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor { shape: vec![self.n, self.oc, self.oh, self.ow], data: y }
    }

    fn backward(&self, x: &Tensor, wts: &[f64], dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let (hw, ohw, k) = (self.h * self.w, self.oh * self.ow, self.k);
        let mut dx = vec![0.0; x.data.len()];
        let mut dw = vec![0.0; wts.len()];
        let mut db = vec![0.0; self.oc];
        for s in 0..self.n {
            for o in 0..self.oc {
                let g = &dy.data[(s * self.oc + o) * ohw..(s * self.oc + o + 1) * ohw];
                db[o] += g.iter().sum::<f64>();
                for c in 0..self.ic {
                    let off = (s * self.ic + c) * hw;
                    for u in 0..k {
                        for v in 0..k {
                            let wi = ((o * self.ic + c) * k + u) * k + v;
                            let mut acc = 0.0;
                            for (i, r) in self.taps(u, self.h, self.oh) {
                                for (j, col) in self.taps(v, self.w, self.ow) {
                                    let gv = g[i * self.ow + j];
                                    acc += gv * x.data[off + r * self.w + col];
                                    dx[off + r * self.w + col] += gv * wts[wi];
                                }
                            }
                            dw[wi] += acc;
                        }
                    }
                }
            }
        }
        (Tensor { shape: x.shape.clone(), data: dx }, dw, db)
    }
}

fn for_channels(data: &[f64], dim: usize, spatial: usize, mut f: impl FnMut(usize, f64)) {
    for (i, &v) in data.iter().enumerate() {
        f((i / spatial) % dim, v);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
