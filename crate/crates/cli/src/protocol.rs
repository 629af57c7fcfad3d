//! Recorder wire messages: one JSON object per line, tagged by `type`.

use hcr_core::replay::Role;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// `env` names the game kind or the config digest the server runs.
    StartSession {
        #[serde(default)]
        env: Option<String>,
        #[serde(default)]
        seed: u64,
    },
    Input { action: usize },
    MarkCheckpoint { role: Role },
    EndSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub transitions: usize,
    pub checkpoints: Vec<String>,
    pub final_score: f64,
    pub final_tick: u64,
    pub log_path: Option<String>,
    pub pool_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: u32,
        env_kind: String,
        config_digest: String,
        action_names: Vec<String>,
        grid: GridDims,
        channel_legend: Vec<String>,
    },
    Frame {
        session: String,
        /// Row-major cell codes, `grid.height × grid.width`.
        cells: Vec<u8>,
        score: f64,
        #[serde(default)]
        lives: Option<u32>,
        tick: u64,
        /// Score change of the input this frame acknowledges.
        reward: f64,
        terminal: bool,
    },
    CheckpointAck {
        id: String,
        role: Role,
        score: f64,
        tick: u64,
    },
    Ended {
        summary: SessionSummary,
    },
    Error {
        message: String,
    },
    /// Another session is active; the connection is closed after this.
    Busy {
        message: String,
    },
}

impl ClientMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_use_snake_case_tags() {
        let m = ClientMessage::MarkCheckpoint { role: Role::Eval };
        assert_eq!(m.to_line(), r#"{"type":"mark_checkpoint","role":"eval"}"#);
        let parsed: ClientMessage = serde_json::from_str(r#"{"type":"start_session"}"#).unwrap();
        assert_eq!(parsed, ClientMessage::StartSession { env: None, seed: 0 });
        let input: ClientMessage = serde_json::from_str(r#"{"type":"input","action":3}"#).unwrap();
        assert_eq!(input, ClientMessage::Input { action: 3 });
    }

    #[test]
    fn server_messages_round_trip() {
        let m = ServerMessage::Frame {
            session: "s0001".into(),
            cells: vec![0, 1, 2],
            score: 5.0,
            lives: Some(3),
            tick: 8,
            reward: 0.0,
            terminal: false,
        };
        let back: ServerMessage = serde_json::from_str(&m.to_line()).unwrap();
        assert_eq!(back, m);
    }
}
