//! Keystroke-dynamics toolkit: feature extraction from key-event logs and
//! soft-biometric inference (gender, major, typing style, age, height).
//!
//! The pipeline runs `synth` (optional) → [`ingest`] → [`features`] →
//! [`preprocess`] → [`ml`] / [`neural`] → [`protocol`].

pub mod cli;
pub mod features;
pub mod ingest;
pub mod ml;
pub mod neural;
pub mod preprocess;
pub mod protocol;
pub mod selftest;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Preprocess(#[from] preprocess::PreprocessError),
    #[error(transparent)]
    Ml(#[from] ml::MlError),
    #[error(transparent)]
    Neural(#[from] neural::NeuralError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error("{0}: {1}")]
    Path(String, std::io::Error),
}
