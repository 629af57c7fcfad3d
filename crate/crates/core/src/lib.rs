//! Deep Q-learning with human checkpoint replay and human experience replay
//! on deterministic, checkpointable sparse-reward grid environments.
//!
//! The network engine is generic over its element type ([`Scalar`]); the
//! training stack runs in `f32` through the aliases below.

pub mod agent;
pub mod envs;
pub mod evaluation;
pub mod nn;
pub mod planner;
pub mod replay;
pub mod scalar;
pub mod training;

pub use scalar::Scalar;

/// Single-precision tensor, the type observations and Q-values use in training.
pub type Tensor32 = nn::Tensor<f32>;
/// Double-precision tensor, used by gradient checks.
pub type Tensor64 = nn::Tensor<f64>;
pub type Params32 = nn::Parameters<f32>;
pub type Params64 = nn::Parameters<f64>;

#[cfg(feature = "oracles")]
pub mod oracles;
