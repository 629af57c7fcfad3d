//! Recorder sessions: a person (or the scripted demonstrator) plays a game
//! through the wire protocol while every step is logged and chosen states
//! are stored as checkpoints.
//!
//! [`Connection`] is the per-client state machine and knows nothing about
//! sockets; [`crate::transport`] feeds it lines.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hcr_core::envs::{Env, EnvConfig, Environment, ACTION_NAMES};
use hcr_core::replay::{CheckpointPool, CheckpointRecord, LogRecord, ReplayError, Role, TransitionLogWriter};

use crate::protocol::{ClientMessage, GridDims, ServerMessage, SessionSummary, PROTOCOL_VERSION};

/// What a recorder serves and where sessions are written.
#[derive(Debug, Clone)]
pub struct RecorderConfig {
    pub env: EnvConfig,
    /// One transition log per session, `<session>.jsonl`.
    pub log_dir: Option<PathBuf>,
    /// Marked checkpoints are appended here when a session ends.
    pub pool_path: Option<PathBuf>,
}

impl RecorderConfig {
    pub fn hello(&self) -> anyhow::Result<ServerMessage> {
        let (env, _) = Env::reset_new(&self.env, self.env.seed())?;
        let shape = env.observation_shape();
        Ok(ServerMessage::Hello {
            protocol: PROTOCOL_VERSION,
            env_kind: self.env.kind().to_string(),
            config_digest: self.env.digest(),
            action_names: ACTION_NAMES[..env.action_count()].iter().map(|s| s.to_string()).collect(),
            grid: GridDims { height: shape.height, width: shape.width },
            channel_legend: env.channel_legend().iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Lowest `sNNNN` id with no log file and no checkpoints in the pool.
    fn next_session_id(&self, taken_in_process: &[String]) -> String {
        let pool_sessions: Vec<String> = match &self.pool_path {
            Some(p) if p.exists() => CheckpointPool::load(p)
                .map(|pool| pool.records().iter().map(|r| r.source_session.clone()).collect())
                .unwrap_or_default(),
            _ => Vec::new(),
        };
        (1..)
            .map(|n| format!("s{n:04}"))
            .find(|id| {
                !taken_in_process.contains(id)
                    && !pool_sessions.contains(id)
                    && self.log_dir.as_ref().map_or(true, |d| !d.join(format!("{id}.jsonl")).exists())
            })
            .expect("unbounded id space")
    }
}

struct Session {
    id: String,
    env: Env,
    records: Vec<LogRecord>,
    checkpoints: Vec<CheckpointRecord>,
}

/// Protocol state of one client connection.
pub struct Connection<'a> {
    config: &'a RecorderConfig,
    session: Option<Session>,
    /// Sessions this connection already ended, with their summaries.
    finished: Vec<SessionSummary>,
}

impl<'a> Connection<'a> {
    pub fn new(config: &'a RecorderConfig) -> Self {
        Self { config, session: None, finished: Vec::new() }
    }

    pub fn finished(&self) -> &[SessionSummary] {
        &self.finished
    }

    /// Reply to one raw line. Malformed input yields an error reply and
    /// leaves any session untouched.
    pub fn handle_line(&mut self, line: &str) -> ServerMessage {
        match serde_json::from_str::<ClientMessage>(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => ServerMessage::Error { message: format!("malformed message: {e}") },
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> ServerMessage {
        let result = match msg {
            ClientMessage::StartSession { env, seed } => self.start(env.as_deref(), seed),
            ClientMessage::Input { action } => self.input(action),
            ClientMessage::MarkCheckpoint { role } => self.mark(role),
            ClientMessage::EndSession => self.end().map(|summary| ServerMessage::Ended { summary }),
        };
        result.unwrap_or_else(|e| ServerMessage::Error { message: format!("{e:#}") })
    }

    /// Ends and flushes an active session, as on client disconnect.
    pub fn disconnect(&mut self) -> Option<SessionSummary> {
        if self.session.is_some() {
            self.end().ok()
        } else {
            None
        }
    }

    fn start(&mut self, env_ref: Option<&str>, seed: u64) -> anyhow::Result<ServerMessage> {
        if self.session.is_some() {
            bail!("a session is already active");
        }
        let config = &self.config.env;
        if let Some(r) = env_ref {
            if r != config.kind().as_str() && r != config.digest() {
                bail!("this recorder serves {} ({}), not {r}", config.kind(), config.digest());
            }
        }
        let (env, _) = Env::reset_new(config, seed)?;
        let taken: Vec<String> = self.finished.iter().map(|s| s.session.clone()).collect();
        let id = self.config.next_session_id(&taken);
        self.session = Some(Session { id, env, records: Vec::new(), checkpoints: Vec::new() });
        Ok(self.frame(0.0))
    }

    fn active(&mut self) -> anyhow::Result<&mut Session> {
        self.session.as_mut().context("no active session; send start_session first")
    }

    fn frame(&self, reward: f64) -> ServerMessage {
        let s = self.session.as_ref().expect("frame needs a session");
        let info = s.env.info();
        ServerMessage::Frame {
            session: s.id.clone(),
            cells: s.env.observe().codes().to_vec(),
            score: info.raw_score,
            lives: info.lives,
            tick: info.tick,
            reward,
            terminal: s.env.is_terminal(),
        }
    }

    fn input(&mut self, action: usize) -> anyhow::Result<ServerMessage> {
        let s = self.active()?;
        if s.env.is_terminal() {
            bail!("the game is over; end the session");
        }
        let obs = s.env.observe();
        let tick = s.env.info().tick;
        let r = s.env.step(action)?;
        s.records.push(LogRecord {
            session: s.id.clone(),
            tick,
            action,
            reward: r.reward,
            terminal: r.terminal,
            obs,
        });
        Ok(self.frame(r.reward))
    }

    fn mark(&mut self, role: Role) -> anyhow::Result<ServerMessage> {
        let s = self.active()?;
        if s.env.is_terminal() {
            bail!("cannot mark a finished game");
        }
        let info = s.env.info();
        let id = format!("{}-cp{:03}", s.id, s.checkpoints.len() + 1);
        s.checkpoints.push(CheckpointRecord {
            id: id.clone(),
            checkpoint: s.env.snapshot(),
            source_session: s.id.clone(),
            tick_index: info.tick,
            role,
        });
        Ok(ServerMessage::CheckpointAck { id, role, score: info.raw_score, tick: info.tick })
    }

    fn end(&mut self) -> anyhow::Result<SessionSummary> {
        let s = self.session.take().context("no active session")?;
        let info = s.env.info();
        let mut summary = SessionSummary {
            session: s.id.clone(),
            transitions: s.records.len(),
            checkpoints: s.checkpoints.iter().map(|c| c.id.clone()).collect(),
            final_score: info.raw_score,
            final_tick: info.tick,
            log_path: None,
            pool_path: None,
        };
        if let Some(dir) = &self.config.log_dir {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}.jsonl", s.id));
            let mut w = TransitionLogWriter::create(&path)?;
            for r in &s.records {
                w.append(r)?;
            }
            summary.log_path = Some(path.display().to_string());
        }
        if let Some(path) = &self.config.pool_path {
            append_to_pool(path, &self.config.env, s.checkpoints)?;
            summary.pool_path = Some(path.display().to_string());
        }
        self.finished.push(summary.clone());
        Ok(summary)
    }
}

/// Adds records to the pool file, creating it if needed.
pub fn append_to_pool(path: &Path, env: &EnvConfig, records: Vec<CheckpointRecord>) -> anyhow::Result<()> {
    let mut all = match CheckpointPool::load(path) {
        Ok(pool) => {
            if pool.config_digest() != env.digest() {
                bail!("{} holds checkpoints for config {}, recorder runs {}", path.display(), pool.config_digest(), env.digest());
            }
            pool.records().to_vec()
        }
        Err(ReplayError::EmptyPool(_)) => Vec::new(),
        Err(ReplayError::Io { .. }) if !path.exists() => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    all.extend(records);
    if all.is_empty() {
        return Ok(());
    }
    CheckpointPool::new(env.kind(), &env.digest(), all)?.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path) -> RecorderConfig {
        RecorderConfig {
            env: EnvConfig::default_key_labyrinth(),
            log_dir: Some(dir.join("logs")),
            pool_path: Some(dir.join("pool.jsonl")),
        }
    }

    #[test]
    fn inputs_before_start_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        let mut conn = Connection::new(&c);
        assert!(matches!(conn.handle(ClientMessage::Input { action: 0 }), ServerMessage::Error { .. }));
        assert!(matches!(conn.handle_line("{not json"), ServerMessage::Error { .. }));
    }

    #[test]
    fn malformed_line_keeps_the_session() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        let mut conn = Connection::new(&c);
        conn.handle(ClientMessage::StartSession { env: None, seed: 0 });
        assert!(matches!(conn.handle_line(r#"{"type":"input"}"#), ServerMessage::Error { .. }));
        assert!(matches!(conn.handle_line(r#"{"type":"input","action":99}"#), ServerMessage::Error { .. }));
        assert!(matches!(conn.handle(ClientMessage::Input { action: 0 }), ServerMessage::Frame { tick: 4, .. }));
    }

    #[test]
    fn wrong_env_reference_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        let mut conn = Connection::new(&c);
        let reply = conn.handle(ClientMessage::StartSession { env: Some("detective-grid".into()), seed: 0 });
        assert!(matches!(reply, ServerMessage::Error { .. }));
        let reply = conn.handle(ClientMessage::StartSession { env: Some("key-labyrinth".into()), seed: 0 });
        assert!(matches!(reply, ServerMessage::Frame { tick: 0, .. }));
    }

    #[test]
    fn session_ids_skip_existing_logs() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        fs::create_dir_all(dir.path().join("logs")).unwrap();
        fs::write(dir.path().join("logs/s0001.jsonl"), "").unwrap();
        assert_eq!(c.next_session_id(&[]), "s0002");
        assert_eq!(c.next_session_id(&["s0002".into()]), "s0003");
    }
}
