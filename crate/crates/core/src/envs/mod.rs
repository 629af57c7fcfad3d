//! Deterministic, checkpointable sparse-reward grid games.
//!
//! Both games expose the same surface through [`Environment`]: the trainer
//! and evaluator only ever see observations, rewards and opaque
//! [`Checkpoint`]s.

mod blob;
mod config;
mod detective;
mod labyrinth;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use blob::{BlobReader, BlobWriter};
pub(crate) use blob::base64_bytes;
pub use config::{
    CellRef, DetectiveConfig, DetectiveRewards, EnvConfig, HazardConfig, LabyrinthConfig, LabyrinthRewards, MonsterConfig,
    RoomConfig,
};
pub use detective::DetectiveGrid;
pub use labyrinth::{KeyLabyrinth, Pos};

use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Names of the default eight-action set, in index order.
pub const ACTION_NAMES: [&str; 8] = ["no-op", "up", "down", "left", "right", "jump", "jump-left", "jump-right"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    Noop = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
    Jump = 5,
    JumpLeft = 6,
    JumpRight = 7,
}

impl Action {
    pub const COUNT: usize = 8;

    pub fn from_index(index: usize) -> Option<Self> {
        use Action::*;
        [Noop, Up, Down, Left, Right, Jump, JumpLeft, JumpRight].get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ACTION_NAMES[self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    KeyLabyrinth,
    DetectiveGrid,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::KeyLabyrinth => "key-labyrinth",
            EnvKind::DetectiveGrid => "detective-grid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "key-labyrinth" => Some(EnvKind::KeyLabyrinth),
            "detective-grid" => Some(EnvKind::DetectiveGrid),
            _ => None,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(channels, height, width)` of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObsShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ObsShape {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One rendered frame, stored compactly as one cell-kind code per cell.
/// The one-hot tensor is produced on demand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    shape: ObsShape,
    codes: Arc<[u8]>,
}

impl Observation {
    pub fn from_codes(shape: ObsShape, codes: Vec<u8>) -> Result<Self, EnvError> {
        if codes.len() != shape.cells() {
            return Err(EnvError::MalformedObservation(format!(
                "{} codes for a {}x{} grid",
                codes.len(),
                shape.height,
                shape.width
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= shape.channels) {
            return Err(EnvError::MalformedObservation(format!("cell code {bad} >= {} channels", shape.channels)));
        }
        Ok(Self { shape, codes: codes.into() })
    }

    /// Decodes a one-hot `(channels, height, width)` array.
    pub fn from_one_hot(shape: ObsShape, values: &[f32]) -> Result<Self, EnvError> {
        if values.len() != shape.len() {
            return Err(EnvError::MalformedObservation(format!(
                "{} values for shape {shape:?}",
                values.len()
            )));
        }
        let cells = shape.cells();
        let mut codes = Vec::with_capacity(cells);
        for cell in 0..cells {
            let mut hot = None;
            for c in 0..shape.channels {
                let v = values[c * cells + cell];
                if v == 1.0 {
                    if hot.is_some() {
                        return Err(EnvError::MalformedObservation(format!("cell {cell} has two hot channels")));
                    }
                    hot = Some(c as u8);
                } else if v != 0.0 {
                    return Err(EnvError::MalformedObservation(format!("cell {cell} holds {v}")));
                }
            }
            codes.push(hot.ok_or_else(|| EnvError::MalformedObservation(format!("cell {cell} has no hot channel")))?);
        }
        Ok(Self { shape, codes: codes.into() })
    }

    pub fn shape(&self) -> ObsShape {
        self.shape
    }

    /// Cell-kind code per cell, row-major.
    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn code_at(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.shape.width + col]
    }

    /// Writes the one-hot encoding into `out` (length `channels·height·width`).
    pub fn write_one_hot<T: Scalar>(&self, out: &mut [T]) {
        out.fill(T::zero());
        let cells = self.shape.cells();
        for (cell, &code) in self.codes.iter().enumerate() {
            out[code as usize * cells + cell] = T::one();
        }
    }

    pub fn one_hot_f32(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.shape.len()];
        self.write_one_hot(&mut v);
        v
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); self.shape.len()];
        self.write_one_hot(&mut data);
        Tensor::new(vec![self.shape.channels, self.shape.height, self.shape.width], data).expect("consistent shape")
    }
}

/// The last `k` observations, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StackedState {
    frames: Vec<Observation>,
}

pub const DEFAULT_STACK: usize = 4;

impl StackedState {
    /// Episode start: every slot holds `first`.
    pub fn padded(first: Observation, stack_size: usize) -> Self {
        assert!(stack_size > 0, "stack size must be positive");
        Self { frames: vec![first; stack_size] }
    }

    pub fn from_frames(frames: Vec<Observation>) -> Result<Self, EnvError> {
        let first = frames
            .first()
            .ok_or_else(|| EnvError::MalformedObservation("empty frame stack".into()))?;
        if frames.iter().any(|f| f.shape != first.shape) {
            return Err(EnvError::MalformedObservation("frames in a stack differ in shape".into()));
        }
        Ok(Self { frames })
    }

    /// Drops the oldest frame and appends `obs`.
    pub fn pushed(&self, obs: Observation) -> Self {
        let mut frames = Vec::with_capacity(self.frames.len());
        frames.extend_from_slice(&self.frames[1..]);
        frames.push(obs);
        Self { frames }
    }

    pub fn frames(&self) -> &[Observation] {
        &self.frames
    }

    pub fn latest(&self) -> &Observation {
        self.frames.last().expect("non-empty stack")
    }

    pub fn stack_size(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_shape(&self) -> ObsShape {
        self.frames[0].shape
    }

    /// Network input shape: frames are concatenated along the channel axis.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.frame_shape();
        [s.channels * self.frames.len(), s.height, s.width]
    }

    pub fn write_input<T: Scalar>(&self, out: &mut [T]) {
        let len = self.frame_shape().len();
        for (i, frame) in self.frames.iter().enumerate() {
            frame.write_one_hot(&mut out[i * len..(i + 1) * len]);
        }
    }

    pub fn input_len(&self) -> usize {
        self.frame_shape().len() * self.frames.len()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); self.input_len()];
        self.write_input(&mut data);
        Tensor::new(self.input_shape().to_vec(), data).expect("consistent shape")
    }

    /// Batch tensor `(n, channels·k, height, width)`.
    pub fn batch_tensor<'a, T: Scalar>(states: impl ExactSizeIterator<Item = &'a StackedState>) -> Tensor<T> {
        let n = states.len();
        let mut shape = None;
        let mut data = Vec::new();
        for (i, s) in states.enumerate() {
            if shape.is_none() {
                shape = Some(s.input_shape());
                data = vec![T::zero(); n * s.input_len()];
            }
            let len = s.input_len();
            s.write_input(&mut data[i * len..(i + 1) * len]);
        }
        let [c, h, w] = shape.expect("non-empty batch");
        Tensor::new(vec![n, c, h, w], data).expect("consistent batch")
    }
}

/// Complete environment state as opaque bytes, tagged with the game kind and
/// the digest of the configuration it was taken under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub env_kind: EnvKind,
    pub config_digest: String,
    #[serde(with = "blob::base64_bytes")]
    pub blob: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// `None` for games without a lives counter.
    pub lives: Option<u32>,
    pub raw_score: f64,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    /// Score change summed over the skipped ticks.
    pub reward: f64,
    pub terminal: bool,
    /// Ticks actually simulated (fewer than the frame skip if the episode ended).
    pub ticks: u32,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("step after terminal state; reset or restore first")]
    StepAfterTerminal,
    #[error("action index {index} out of range for {count} actions")]
    InvalidAction { index: usize, count: usize },
    #[error("checkpoint is for {found}, environment is {expected}")]
    KindMismatch { expected: EnvKind, found: EnvKind },
    #[error("checkpoint config digest {found} does not match {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("malformed checkpoint blob: {0}")]
    MalformedBlob(String),
    #[error("malformed observation: {0}")]
    MalformedObservation(String),
    #[error("config file {path}: {message}")]
    ConfigFile { path: String, message: String },
}

/// Interface the trainer, evaluator and recorder drive.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;
    fn action_count(&self) -> usize;
    fn observation_shape(&self) -> ObsShape;
    fn frame_skip(&self) -> u32;

    /// Back to the canonical start state.
    fn reset(&mut self) -> Observation;
    fn observe(&self) -> Observation;

    /// Applies `action` for at most `max_ticks` ticks (the frame skip caps it).
    fn step_limited(&mut self, action: usize, max_ticks: u32) -> Result<StepResult, EnvError>;

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let skip = self.frame_skip();
        self.step_limited(action, skip)
    }

    fn snapshot(&self) -> Checkpoint;
    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<Observation, EnvError>;

    fn is_terminal(&self) -> bool;
    fn info(&self) -> StepInfo;
}

/// Either built-in game.
#[derive(Debug, Clone)]
pub enum Env {
    KeyLabyrinth(KeyLabyrinth),
    DetectiveGrid(DetectiveGrid),
}

impl Env {
    /// Canonical start state of `config`, using `seed` for the game's RNG.
    pub fn reset_new(config: &EnvConfig, seed: u64) -> Result<(Self, Observation), EnvError> {
        let env = match config {
            EnvConfig::KeyLabyrinth(c) => Env::KeyLabyrinth(KeyLabyrinth::new(c, seed)?),
            EnvConfig::DetectiveGrid(c) => Env::DetectiveGrid(DetectiveGrid::new(c, seed)?),
        };
        let obs = env.observe();
        Ok((env, obs))
    }

    /// Builds an environment for `config` and loads `checkpoint` into it.
    pub fn restore_new(config: &EnvConfig, checkpoint: &Checkpoint) -> Result<(Self, Observation), EnvError> {
        let (mut env, _) = Self::reset_new(config, 0)?;
        let obs = env.restore(checkpoint)?;
        Ok((env, obs))
    }

    /// State encoding without the tick and score, for search deduplication.
    pub fn dynamics_key(&self) -> Vec<u8> {
        match self {
            Env::KeyLabyrinth(e) => e.dynamics_key(),
            Env::DetectiveGrid(e) => e.dynamics_key(),
        }
    }

    /// Names of the observation channels, indexed by cell code.
    pub fn channel_legend(&self) -> &'static [&'static str] {
        match self {
            Env::KeyLabyrinth(_) => labyrinth::CHANNELS,
            Env::DetectiveGrid(_) => detective::CHANNELS,
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $env:ident => $e:expr) => {
        match $self {
            Env::KeyLabyrinth($env) => $e,
            Env::DetectiveGrid($env) => $e,
        }
    };
}

impl Environment for Env {
    fn kind(&self) -> EnvKind {
        dispatch!(self, e => e.kind())
    }
    fn action_count(&self) -> usize {
        dispatch!(self, e => e.action_count())
    }
    fn observation_shape(&self) -> ObsShape {
        dispatch!(self, e => e.observation_shape())
    }
    fn frame_skip(&self) -> u32 {
        dispatch!(self, e => e.frame_skip())
    }
    fn reset(&mut self) -> Observation {
        dispatch!(self, e => e.reset())
    }
    fn observe(&self) -> Observation {
        dispatch!(self, e => e.observe())
    }
    fn step_limited(&mut self, action: usize, max_ticks: u32) -> Result<StepResult, EnvError> {
        dispatch!(self, e => e.step_limited(action, max_ticks))
    }
    fn snapshot(&self) -> Checkpoint {
        dispatch!(self, e => e.snapshot())
    }
    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<Observation, EnvError> {
        dispatch!(self, e => e.restore(checkpoint))
    }
    fn is_terminal(&self) -> bool {
        dispatch!(self, e => e.is_terminal())
    }
    fn info(&self) -> StepInfo {
        dispatch!(self, e => e.info())
    }
}

pub(crate) fn check_checkpoint(kind: EnvKind, digest: &str, checkpoint: &Checkpoint) -> Result<(), EnvError> {
    if checkpoint.env_kind != kind {
        return Err(EnvError::KindMismatch { expected: kind, found: checkpoint.env_kind });
    }
    if checkpoint.config_digest != digest {
        return Err(EnvError::DigestMismatch { expected: digest.to_string(), found: checkpoint.config_digest.clone() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_round_trip() {
        let shape = ObsShape { channels: 3, height: 2, width: 2 };
        let obs = Observation::from_codes(shape, vec![0, 2, 1, 2]).unwrap();
        let hot = obs.one_hot_f32();
        assert_eq!(hot.len(), 12);
        assert_eq!(Observation::from_one_hot(shape, &hot).unwrap(), obs);
        let mut bad = hot.clone();
        bad[0] = 0.0;
        assert!(Observation::from_one_hot(shape, &bad).is_err());
    }

    #[test]
    fn stacking_shifts_oldest_out() {
        let shape = ObsShape { channels: 2, height: 1, width: 1 };
        let a = Observation::from_codes(shape, vec![0]).unwrap();
        let b = Observation::from_codes(shape, vec![1]).unwrap();
        let s = StackedState::padded(a.clone(), 3);
        assert!(s.frames().iter().all(|f| *f == a));
        let t = s.pushed(b.clone());
        assert_eq!(t.frames(), &[a.clone(), a, b]);
        assert_eq!(t.input_shape(), [6, 1, 1]);
    }
}
