//! Small CPU network engine: dense and convolution layers, reverse-mode
//! gradients, and RMSProp.

mod gemm;
mod network;
mod params;
mod rmsprop;
mod spec;
mod tensor;
mod weights_file;

pub use network::{backward, backward_traced, forward, forward_traced, Trace};
pub use params::Parameters;
pub use rmsprop::{rmsprop_step, RmsPropConfig, RmsPropState};
pub use spec::{Activation, Layer, NetworkSpec};
pub use tensor::Tensor;
pub use weights_file::{decode_weights, encode_weights, load_weights, save_weights};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch at {layer}: {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("parameter key sets differ: {0}")]
    KeyMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("weights file: {0}")]
    WeightsFormat(String),
    #[error("i/o: {0}")]
    Io(String),
}
