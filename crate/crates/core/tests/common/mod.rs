//! A one-row corridor game small enough for exact bookkeeping tests.

#![allow(dead_code)]

use hcr_core::agent::AgentConfig;
use hcr_core::envs::{
    Checkpoint, EnvError, EnvKind, Environment, ObsShape, Observation, StepInfo, StepResult,
};
use hcr_core::nn::NetworkSpec;

pub const DIGEST: &str = "corridor";

/// Action 0 steps left, action 1 steps right. Reaching the last cell pays
/// +1 and ends the episode, unless the corridor is endless, in which case
/// the avatar simply stays there.
#[derive(Debug, Clone)]
pub struct Corridor {
    pub length: usize,
    pub endless: bool,
    pos: usize,
    tick: u64,
    score: f64,
    terminal: bool,
}

impl Corridor {
    pub fn new(length: usize, endless: bool) -> Self {
        Self { length, endless, pos: 0, tick: 0, score: 0.0, terminal: false }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    /// Checkpoint of a state with the avatar at `pos`.
    pub fn checkpoint_at(&self, pos: usize) -> Checkpoint {
        let mut c = self.clone();
        c.pos = pos;
        c.snapshot()
    }
}

impl Environment for Corridor {
    fn kind(&self) -> EnvKind {
        EnvKind::KeyLabyrinth
    }

    fn action_count(&self) -> usize {
        2
    }

    fn observation_shape(&self) -> ObsShape {
        ObsShape { channels: 2, height: 1, width: self.length }
    }

    fn frame_skip(&self) -> u32 {
        4
    }

    fn reset(&mut self) -> Observation {
        *self = Self::new(self.length, self.endless);
        self.observe()
    }

    fn observe(&self) -> Observation {
        let codes = (0..self.length).map(|i| (i == self.pos) as u8).collect();
        Observation::from_codes(self.observation_shape(), codes).unwrap()
    }

    fn step_limited(&mut self, action: usize, max_ticks: u32) -> Result<StepResult, EnvError> {
        if self.terminal {
            return Err(EnvError::StepAfterTerminal);
        }
        if action >= 2 {
            return Err(EnvError::InvalidAction { index: action, count: 2 });
        }
        let ticks = max_ticks.min(self.frame_skip()).max(1);
        let last = self.length - 1;
        let before = self.pos;
        self.pos = if action == 0 { self.pos.saturating_sub(1) } else { (self.pos + 1).min(last) };
        let mut reward = 0.0;
        if self.pos == last && before != last && !self.endless {
            reward = 1.0;
            self.terminal = true;
        }
        self.score += reward;
        self.tick += ticks as u64;
        Ok(StepResult { observation: self.observe(), reward, terminal: self.terminal, ticks, info: self.info() })
    }

    fn snapshot(&self) -> Checkpoint {
        let mut blob = vec![self.pos as u8, self.terminal as u8];
        blob.extend_from_slice(&self.tick.to_le_bytes());
        blob.extend_from_slice(&self.score.to_le_bytes());
        Checkpoint { env_kind: self.kind(), config_digest: DIGEST.into(), blob }
    }

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<Observation, EnvError> {
        let b = &checkpoint.blob;
        if b.len() != 18 || b[0] as usize >= self.length {
            return Err(EnvError::MalformedBlob("corridor blob".into()));
        }
        self.pos = b[0] as usize;
        self.terminal = b[1] != 0;
        self.tick = u64::from_le_bytes(b[2..10].try_into().unwrap());
        self.score = f64::from_le_bytes(b[10..18].try_into().unwrap());
        Ok(self.observe())
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn info(&self) -> StepInfo {
        StepInfo { lives: None, raw_score: self.score, tick: self.tick }
    }
}

/// Single-frame agent config with a linear Q-function over the corridor.
pub fn corridor_agent(length: usize) -> AgentConfig {
    let mut config = AgentConfig::for_game([2, 1, length], 2, 1);
    config.spec = NetworkSpec::tabular(2 * length, 2);
    config
}

/// Never ends; every decision pays `reward`, whatever the action.
#[derive(Debug, Clone)]
pub struct Payout {
    pub reward: f64,
    tick: u64,
    score: f64,
}

impl Payout {
    pub fn new(reward: f64) -> Self {
        Self { reward, tick: 0, score: 0.0 }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.snapshot()
    }
}

impl Environment for Payout {
    fn kind(&self) -> EnvKind {
        EnvKind::DetectiveGrid
    }

    fn action_count(&self) -> usize {
        8
    }

    fn observation_shape(&self) -> ObsShape {
        ObsShape { channels: 1, height: 1, width: 1 }
    }

    fn frame_skip(&self) -> u32 {
        4
    }

    fn reset(&mut self) -> Observation {
        *self = Self::new(self.reward);
        self.observe()
    }

    fn observe(&self) -> Observation {
        Observation::from_codes(self.observation_shape(), vec![0]).unwrap()
    }

    fn step_limited(&mut self, action: usize, max_ticks: u32) -> Result<StepResult, EnvError> {
        if action >= 8 {
            return Err(EnvError::InvalidAction { index: action, count: 8 });
        }
        let ticks = max_ticks.min(4).max(1);
        self.tick += ticks as u64;
        self.score += self.reward;
        Ok(StepResult { observation: self.observe(), reward: self.reward, terminal: false, ticks, info: self.info() })
    }

    fn snapshot(&self) -> Checkpoint {
        Checkpoint { env_kind: self.kind(), config_digest: DIGEST.into(), blob: self.tick.to_le_bytes().to_vec() }
    }

    fn restore(&mut self, checkpoint: &Checkpoint) -> Result<Observation, EnvError> {
        let bytes: [u8; 8] = checkpoint.blob[..].try_into().map_err(|_| EnvError::MalformedBlob("payout blob".into()))?;
        self.tick = u64::from_le_bytes(bytes);
        Ok(self.observe())
    }

    fn is_terminal(&self) -> bool {
        false
    }

    fn info(&self) -> StepInfo {
        StepInfo { lives: None, raw_score: self.score, tick: self.tick }
    }
}
