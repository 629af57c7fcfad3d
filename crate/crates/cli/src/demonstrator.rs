//! Scripted stand-in for a human player. It plays through the recorder
//! protocol like any client, steering a local copy of the game with a
//! breadth-first planner and occasionally pressing a random key, and marks
//! checkpoints at a fixed decision interval.
//!
//! The local copy is checked against every frame the recorder sends, so a
//! demonstration doubles as a fidelity test of the recorder.

use anyhow::{bail, Context};
use hcr_core::envs::{Env, EnvConfig, Environment};
use hcr_core::planner::{plan_to_reward, SearchLimits};
use hcr_core::replay::Role;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{ClientMessage, ServerMessage, SessionSummary};
use crate::transport::Client;

/// Consecutive decisions without any reachable reward before a session ends.
const MAX_WANDER: usize = 20;
/// Decisions to wander after a failed search before searching again.
const SEARCH_BACKOFF: usize = 5;

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub sessions: usize,
    /// Chance per decision of a random key instead of the planned one.
    pub noise: f64,
    /// Decisions between checkpoint marks.
    pub mark_every: usize,
    /// Upper bound on inputs per session.
    pub max_inputs: usize,
    pub limits: SearchLimits,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { sessions: 10, noise: 0.1, mark_every: 5, max_inputs: 600, limits: SearchLimits::default(), seed: 0 }
    }
}

/// Next action: follow the current plan, replanning when it runs out; with
/// no reachable reward, wander and retry the search now and then.
struct Pilot {
    plan: Vec<usize>,
    limits: SearchLimits,
    /// Wander decisions left before the next search.
    backoff: usize,
    /// The last search found nothing.
    stuck: bool,
}

impl Pilot {
    fn choose(&mut self, env: &Env, noise: f64, rng: &mut ChaCha8Rng) -> anyhow::Result<usize> {
        if rng.gen::<f64>() < noise {
            self.plan.clear();
            return Ok(rng.gen_range(0..env.action_count()));
        }
        if self.plan.is_empty() && self.backoff > 0 {
            self.backoff -= 1;
        } else if self.plan.is_empty() {
            let found = match plan_to_reward(env, self.limits, true)? {
                Some(p) => Some(p),
                None => plan_to_reward(env, self.limits, false)?,
            };
            self.stuck = found.is_none();
            match found {
                Some(p) => self.plan = p.actions.into_iter().rev().collect(),
                None => self.backoff = SEARCH_BACKOFF,
            }
        }
        Ok(match self.plan.pop() {
            Some(a) => a,
            None => rng.gen_range(0..env.action_count()),
        })
    }
}

fn check_frame(reply: ServerMessage, mirror: &Env) -> anyhow::Result<(f64, bool)> {
    match reply {
        ServerMessage::Frame { cells, score, tick, terminal, .. } => {
            let info = mirror.info();
            if cells != mirror.observe().codes() || score != info.raw_score || tick != info.tick || terminal != mirror.is_terminal() {
                bail!("recorder frame at tick {tick} diverged from the local game copy");
            }
            Ok((score, terminal))
        }
        ServerMessage::Error { message } => bail!("recorder error: {message}"),
        other => bail!("expected a frame, got {other:?}"),
    }
}

/// Plays one session and returns the recorder's summary.
pub fn demonstrate_session(
    client: &mut Client,
    env_config: &EnvConfig,
    config: &DemoConfig,
    session_index: usize,
) -> anyhow::Result<SessionSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(session_index as u64);
    let game_seed = config.seed.wrapping_add(session_index as u64);
    let (mut mirror, _) = Env::reset_new(env_config, game_seed)?;
    let start = ClientMessage::StartSession { env: Some(env_config.digest()), seed: game_seed };
    check_frame(client.request(&start)?, &mirror)?;
    let mut pilot = Pilot { plan: Vec::new(), limits: config.limits, backoff: 0, stuck: false };
    let mut idle = 0;
    for step in 0..config.max_inputs {
        if mirror.is_terminal() {
            break;
        }
        let action = pilot.choose(&mirror, config.noise, &mut rng)?;
        // Once nothing is left to collect, stop instead of wandering forever.
        idle = if pilot.stuck { idle + 1 } else { 0 };
        if idle > MAX_WANDER {
            break;
        }
        if config.mark_every > 0 && step % config.mark_every == config.mark_every / 2 {
            match client.request(&ClientMessage::MarkCheckpoint { role: Role::Train })? {
                ServerMessage::CheckpointAck { score, tick, .. } => {
                    if score != mirror.info().raw_score || tick != mirror.info().tick {
                        bail!("checkpoint ack does not match the game state");
                    }
                }
                other => bail!("expected a checkpoint ack, got {other:?}"),
            }
        }
        mirror.step(action)?;
        check_frame(client.request(&ClientMessage::Input { action })?, &mirror)?;
    }
    match client.request(&ClientMessage::EndSession)? {
        ServerMessage::Ended { summary } => Ok(summary),
        other => bail!("expected the session summary, got {other:?}"),
    }
}

/// Connects to `addr` and records `config.sessions` sessions.
pub fn demonstrate(addr: &str, env_config: &EnvConfig, config: &DemoConfig) -> anyhow::Result<Vec<SessionSummary>> {
    let mut client = Client::connect(addr)?;
    (0..config.sessions)
        .map(|i| demonstrate_session(&mut client, env_config, config, i).with_context(|| format!("session {i}")))
        .collect()
}
