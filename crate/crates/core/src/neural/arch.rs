//! The four reference architectures.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{sequence_shape, square_side, Act, InputLayout, LayerSpec, NetworkSpec, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    Fc,
    Cnn,
    Rnn,
    Lstm,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [ArchKind::Rnn, ArchKind::Lstm, ArchKind::Fc, ArchKind::Cnn];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Fc => "FC",
            ArchKind::Cnn => "CNN",
            ArchKind::Rnn => "RNN",
            ArchKind::Lstm => "LSTM",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown architecture '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Classes(usize),
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchOptions {
    /// Use the strict "< N" reading in both reshaping heuristics.
    pub strict_reshape: bool,
    pub dropout_percent: u32,
    pub recurrent_hidden: usize,
    pub recurrent_layers: usize,
    pub seed: u64,
}

impl Default for ArchOptions {
    fn default() -> Self {
        Self { strict_reshape: false, dropout_percent: 30, recurrent_hidden: 64, recurrent_layers: 3, seed: 0 }
    }
}

fn dense(input: usize, output: usize) -> LayerSpec {
    LayerSpec::Dense { input, output }
}

const RELU: LayerSpec = LayerSpec::Activation { act: Act::Relu };

pub fn build_architecture(
    kind: ArchKind,
    input_dim: usize,
    head: Head,
    opts: &ArchOptions,
) -> Result<NetworkSpec, NeuralError> {
    let out = match head {
        Head::Classes(k) if k >= 2 => k,
        Head::Classes(k) => return Err(NeuralError::InvalidSpec(format!("{k} classes"))),
        Head::Scalar => 1,
    };
    let drop = LayerSpec::Dropout { rate: f64::from(opts.dropout_percent) / 100.0 };
    let (input, mut layers) = match kind {
        ArchKind::Fc => (
            InputLayout::Vector { len: input_dim },
            vec![
                dense(input_dim, 256),
                RELU,
                drop.clone(),
                dense(256, 128),
                RELU,
                drop,
                dense(128, 64),
                RELU,
                dense(64, out),
            ],
        ),
        ArchKind::Cnn => {
            let side = square_side(input_dim, opts.strict_reshape)?;
            let mut layers = Vec::new();
            let mut ch = 1;
            for next in [8, 16, 32, 32] {
                layers.push(LayerSpec::Conv2d { in_ch: ch, out_ch: next, kernel: 3, stride: 1, pad: 1 });
                layers.push(LayerSpec::BatchNorm { dim: next });
                layers.push(RELU);
                ch = next;
            }
            layers.extend([
                LayerSpec::Flatten,
                dense(ch * side * side, 128),
                RELU,
                drop,
                dense(128, 64),
                RELU,
                dense(64, out),
            ]);
            (InputLayout::Image { len: input_dim, side }, layers)
        }
        ArchKind::Rnn | ArchKind::Lstm => {
            let (steps, width) = sequence_shape(input_dim, opts.strict_reshape)?;
            let (layers, hidden) = (opts.recurrent_layers, opts.recurrent_hidden);
            let stack = if kind == ArchKind::Rnn {
                LayerSpec::RnnStack { input: width, layers, hidden }
            } else {
                LayerSpec::LstmStack { input: width, layers, hidden }
            };
            (InputLayout::Sequence { len: input_dim, steps, width }, vec![stack, dense(hidden, out)])
        }
    };
    if matches!(head, Head::Classes(_)) {
        layers.push(LayerSpec::Activation { act: Act::Softmax });
    }
    let spec = NetworkSpec { input, layers, seed: opts.seed };
    spec.validate()?;
    Ok(spec)
}
