//! Experience storage and sampling: the agent replay memory, the read-only
//! human-demonstration memory, the dual-memory sampler and the checkpoint
//! pool, plus their file formats.

mod memory;
mod pool;
mod translog;

use serde::{Deserialize, Serialize};

pub use memory::{sample_dual, ReplayMemory, Source, Transition};
pub use pool::{CheckpointPool, CheckpointRecord, Role};
pub use translog::{log_to_transitions, read_transition_log, write_transition_log, LogRecord, TransitionLogWriter};

use crate::envs::EnvError;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("transition shape {found:?} does not match memory shape {expected:?}")]
    ShapeMismatch { expected: [usize; 3], found: [usize; 3] },
    #[error("{0} memory is empty")]
    EmptyMemory(&'static str),
    #[error("{0} memory is read-only")]
    ReadOnly(&'static str),
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("pool has no {0} records")]
    EmptyRole(Role),
    #[error("duplicate checkpoint id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?} is for {found}, pool expects {expected}")]
    MixedPool { id: String, expected: String, found: String },
    #[error("{0}: pool file has no records")]
    EmptyPool(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Non-fatal finding from loading a pool, for the caller to surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolWarning {
    pub message: String,
}
