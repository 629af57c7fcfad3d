//! Human transition log: one JSON record per decision.
//!
//! Each record holds the observation seen *before* the action, the action,
//! the reward it earned and whether it ended the episode. The successor
//! state of a record is built from the next record of the same session; a
//! session's final record has no successor unless it is terminal, so it is
//! dropped when converting to transitions.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ReplayError, Source, Transition};
use crate::envs::{ObsShape, Observation, StackedState};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub session: String,
    /// Game tick at which the observation was shown.
    pub tick: u64,
    pub action: usize,
    /// Raw, unclipped score change.
    pub reward: f64,
    pub terminal: bool,
    pub obs: Observation,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    session: String,
    tick: u64,
    action: usize,
    reward: f64,
    terminal: bool,
    /// Little-endian `f32` one-hot tensor, `(channels, height, width)`.
    obs: String,
    shape: [usize; 3],
}

impl LogRecord {
    fn to_line(&self) -> String {
        let bytes: Vec<u8> = self.obs.one_hot_f32().iter().flat_map(|v| v.to_le_bytes()).collect();
        let s = self.obs.shape();
        let line = LogLine {
            session: self.session.clone(),
            tick: self.tick,
            action: self.action,
            reward: self.reward,
            terminal: self.terminal,
            obs: STANDARD.encode(bytes),
            shape: [s.channels, s.height, s.width],
        };
        serde_json::to_string(&line).expect("log line serializes")
    }

    fn from_line(text: &str) -> Result<Self, String> {
        let line: LogLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let bytes = STANDARD.decode(line.obs.as_bytes()).map_err(|e| e.to_string())?;
        if bytes.len() % 4 != 0 {
            return Err(format!("observation payload of {} bytes is not a whole number of f32", bytes.len()));
        }
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let [channels, height, width] = line.shape;
        let obs = Observation::from_one_hot(ObsShape { channels, height, width }, &values).map_err(|e| e.to_string())?;
        Ok(Self {
            session: line.session,
            tick: line.tick,
            action: line.action,
            reward: line.reward,
            terminal: line.terminal,
            obs,
        })
    }
}

/// Appends records to a log file, flushing after each one.
pub struct TransitionLogWriter {
    out: BufWriter<fs::File>,
    path: String,
}

impl TransitionLogWriter {
    pub fn create(path: &Path) -> Result<Self, ReplayError> {
        let display = path.display().to_string();
        let file = fs::File::create(path).map_err(|e| ReplayError::Io { path: display.clone(), message: e.to_string() })?;
        Ok(Self { out: BufWriter::new(file), path: display })
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), ReplayError> {
        let io = |e: std::io::Error| ReplayError::Io { path: self.path.clone(), message: e.to_string() };
        writeln!(self.out, "{}", record.to_line()).map_err(io)?;
        self.out.flush().map_err(io)
    }
}

pub fn write_transition_log(path: &Path, records: &[LogRecord]) -> Result<(), ReplayError> {
    let mut w = TransitionLogWriter::create(path)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_transition_log(path: &Path) -> Result<Vec<LogRecord>, ReplayError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| ReplayError::Io { path: display.clone(), message: e.to_string() })?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let parse = |message: String| ReplayError::Parse { path: display.clone(), line: n + 1, message };
        let line = line.map_err(|e| parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(LogRecord::from_line(&line).map_err(parse)?);
    }
    Ok(records)
}

/// Rebuilds stacked transitions from consecutive records. Stacks restart at
/// each terminal and at each session change. Rewards are clipped to
/// `[-1, 1]` when `clip` is set.
pub fn log_to_transitions(records: &[LogRecord], stack: usize, clip: bool) -> Vec<Transition> {
    let mut out = Vec::new();
    let mut state: Option<StackedState> = None;
    for (i, r) in records.iter().enumerate() {
        let current = match state.take() {
            Some(s) => s,
            None => StackedState::padded(r.obs.clone(), stack),
        };
        let reward = if clip { r.reward.clamp(-1.0, 1.0) } else { r.reward };
        let successor = records.get(i + 1).filter(|n| n.session == r.session);
        if r.terminal {
            out.push(Transition {
                next_state: current.clone(),
                state: current,
                action: r.action,
                reward,
                terminal: true,
                source: Source::Human,
            });
            continue;
        }
        let Some(next) = successor else {
            continue;
        };
        let next_state = current.pushed(next.obs.clone());
        out.push(Transition {
            state: current,
            action: r.action,
            reward,
            next_state: next_state.clone(),
            terminal: false,
            source: Source::Human,
        });
        state = Some(next_state);
    }
    out
}
