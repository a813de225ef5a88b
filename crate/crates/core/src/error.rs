use std::path::PathBuf;

use thiserror::Error;

use crate::bab::NeuronRef;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed model JSON: {0}")]
    Json(#[from] serde_json::Error),

    /// A problem with one entry of the model's `layers` array.
    #[error("layer {index}: {message}")]
    Layer { index: usize, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("interval inverted at index {index}: lower {lower} > upper {upper}")]
    InvertedInterval { index: usize, lower: f64, upper: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    /// Sign constraints produced an empty pre-activation interval.
    #[error("infeasible domain: empty interval at layer {layer}, neuron {neuron}")]
    Infeasible { layer: usize, neuron: usize },

    #[error("neuron {0} is not unstable in this domain")]
    NotUnstable(NeuronRef),

    #[error("neuron {0} is already constrained")]
    AlreadyConstrained(NeuronRef),

    #[error("{count} unstable neurons exceed the enumeration limit of {limit}")]
    TooManyUnstable { count: usize, limit: usize },

    #[error("pre-activation {value:e} at layer {layer}, neuron {neuron} is too close to a kink")]
    NearKink {
        layer: usize,
        neuron: usize,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}
