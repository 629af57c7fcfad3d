//! The three training regimes: vanilla DQN, human checkpoint replay (episodes
//! start from recorded human states) and human experience replay (every
//! update mixes human and agent transitions).

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{avg_max_q, save_bundle, AgentConfig, AgentError, AgentState, BundleMeta};
use crate::envs::{Env, EnvConfig, EnvError, Environment, StackedState};
use crate::replay::{
    log_to_transitions, read_transition_log, sample_dual, CheckpointPool, CheckpointRecord, ReplayError, ReplayMemory,
    Role, Source, Transition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Vanilla,
    Hcr,
    Her,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Hcr => "hcr",
            Mode::Her => "her",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vanilla" => Some(Mode::Vanilla),
            "hcr" => Some(Mode::Hcr),
            "her" => Some(Mode::Her),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TrainError + '_ {
    move |e| TrainError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    /// Tick budget for the whole run.
    pub total_frames: u64,
    pub episode_frame_cap: u64,
    /// Apply the episode cap in vanilla and HER runs too.
    pub cap_all_modes: bool,
    pub pool_path: Option<PathBuf>,
    pub human_transitions_path: Option<PathBuf>,
    pub k_h: usize,
    pub k_a: usize,
    pub memory_capacity: usize,
    /// Frames between metrics records.
    pub metrics_period: u64,
    pub held_out_state_count: usize,
    /// Decisions of the random rollout that supplies held-out states.
    pub held_out_rollout_steps: usize,
    /// Frames between intermediate agent bundles; 0 disables them.
    pub bundle_period: u64,
    /// Write one line per update with its batch composition.
    pub log_batches: bool,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(mode: Mode, env: EnvConfig, agent: AgentConfig) -> Self {
        Self {
            mode,
            env,
            agent,
            total_frames: 2_000_000,
            episode_frame_cap: 1800,
            cap_all_modes: true,
            pool_path: None,
            human_transitions_path: None,
            k_h: 16,
            k_a: 16,
            memory_capacity: 100_000,
            metrics_period: 50_000,
            held_out_state_count: 200,
            held_out_rollout_steps: 5000,
            bundle_period: 0,
            log_batches: true,
            seed: 0,
            output_dir: None,
        }
    }

    /// Agent defaults sized for `env`.
    pub fn for_env(mode: Mode, env: EnvConfig) -> Result<Self, TrainError> {
        let (game, _) = Env::reset_new(&env, env.seed())?;
        let s = game.observation_shape();
        let agent = AgentConfig::for_game([s.channels, s.height, s.width], game.action_count(), crate::envs::DEFAULT_STACK);
        Ok(Self::new(mode, env, agent))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.agent.validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.episode_frame_cap == 0 {
            return bad("episode_frame_cap must be positive");
        }
        if self.metrics_period == 0 {
            return bad("metrics_period must be positive");
        }
        if self.memory_capacity == 0 {
            return bad("memory_capacity must be positive");
        }
        match self.mode {
            Mode::Hcr if self.pool_path.is_none() => return bad("hcr mode needs pool_path"),
            Mode::Her if self.human_transitions_path.is_none() => return bad("her mode needs human_transitions_path"),
            Mode::Her if self.k_h + self.k_a != self.agent.batch_size => {
                return Err(TrainError::Config(format!(
                    "her mode needs batch_size ({}) == k_h + k_a ({} + {})",
                    self.agent.batch_size, self.k_h, self.k_a
                )))
            }
            _ => {}
        }
        Ok(())
    }

    fn episode_cap(&self) -> u64 {
        if self.mode == Mode::Hcr || self.cap_all_modes {
            self.episode_frame_cap
        } else {
            u64::MAX
        }
    }
}

/// One metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub frame: u64,
    pub avg_max_q: f64,
    /// Mean raw score of episodes finished during the period.
    pub mean_episode_score: Option<f64>,
    pub episode_count: u64,
    pub epsilon: f64,
    /// Mean loss of the period's updates.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// `None` for the canonical start, else the checkpoint id.
    pub start: Option<String>,
    pub frame_start: u64,
    pub ticks: u64,
    pub decisions: u64,
    pub score: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub frames: u64,
    pub episodes: u64,
    pub updates: u64,
    pub pool_sample_calls: u64,
    pub sample_dual_calls: u64,
    pub max_episode_ticks: u64,
    /// `"human/agent"` → number of update batches with that composition.
    pub batch_composition: BTreeMap<String, u64>,
}

pub struct TrainOutcome {
    pub agent: AgentState<f32>,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub stats: TrainStats,
    pub training_pool_ids: Vec<String>,
}

/// Where an episode begins.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    Canonical,
    Checkpoint(&'a CheckpointRecord),
}

struct Outputs {
    dir: PathBuf,
    metrics: BufWriter<File>,
    episodes: BufWriter<File>,
    batches: Option<BufWriter<File>>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const BATCHES_FILE: &str = "batches.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "train_config.json";
pub const FINAL_BUNDLE_DIR: &str = "final";

fn append_line<T: Serialize>(out: &mut BufWriter<File>, value: &T, path: &Path) -> Result<(), TrainError> {
    serde_json::to_writer(&mut *out, value).expect("record serializes");
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

impl Outputs {
    fn create(dir: &Path, config: &TrainConfig) -> Result<Self, TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let text = serde_json::to_string_pretty(config).expect("config serializes");
        fs::write(dir.join(CONFIG_FILE), text + "\n").map_err(io_err(dir))?;
        // Fresh files per run, then append-mode writes so partial curves survive a crash.
        let open = |name: &str| -> Result<BufWriter<File>, TrainError> {
            let path = dir.join(name);
            File::create(&path).map_err(io_err(&path))?;
            let f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
            Ok(BufWriter::new(f))
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: open(METRICS_FILE)?,
            episodes: open(EPISODES_FILE)?,
            batches: if config.log_batches { Some(open(BATCHES_FILE)?) } else { None },
        })
    }
}

/// Training state over one environment instance.
pub struct Trainer<'a, E: Environment> {
    config: &'a TrainConfig,
    env: E,
    pool: Option<&'a CheckpointPool>,
    human: Option<&'a ReplayMemory>,
    pub agent: AgentState<f32>,
    pub memory: ReplayMemory,
    sample_rng: ChaCha8Rng,
    held_out: Vec<StackedState>,
    steps: u64,
    next_sync: u64,
    next_metrics: u64,
    next_bundle: u64,
    period_scores: Vec<f64>,
    period_losses: Vec<f64>,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub stats: TrainStats,
    outputs: Option<Outputs>,
}

impl<'a, E: Environment> Trainer<'a, E> {
    pub fn new(
        config: &'a TrainConfig,
        env: E,
        pool: Option<&'a CheckpointPool>,
        human: Option<&'a ReplayMemory>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if config.mode == Mode::Hcr {
            let pool = pool.ok_or_else(|| TrainError::Config("hcr mode needs a checkpoint pool".into()))?;
            if pool.count(Role::Train) == 0 {
                return Err(TrainError::Config("checkpoint pool has no train-role records".into()));
            }
        }
        if config.mode == Mode::Her && human.map_or(true, |h| h.is_empty() && config.k_h > 0) {
            return Err(TrainError::Config("her mode needs a non-empty human memory".into()));
        }
        let agent = AgentState::new(&config.agent, config.seed)?;
        let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample_rng.set_stream(2);
        let outputs = match &config.output_dir {
            Some(dir) => Some(Outputs::create(dir, config)?),
            None => None,
        };
        Ok(Self {
            config,
            env,
            pool,
            human,
            agent,
            memory: ReplayMemory::new(config.memory_capacity)?,
            sample_rng,
            held_out: Vec::new(),
            steps: 0,
            next_sync: config.agent.target_sync_period,
            next_metrics: config.metrics_period,
            next_bundle: if config.bundle_period == 0 { u64::MAX } else { config.bundle_period },
            period_scores: Vec::new(),
            period_losses: Vec::new(),
            metrics: Vec::new(),
            episodes: Vec::new(),
            stats: TrainStats::default(),
            outputs,
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn held_out(&self) -> &[StackedState] {
        &self.held_out
    }

    /// States visited by a uniformly random policy from the canonical start,
    /// evenly thinned to `held_out_state_count`.
    pub fn collect_held_out(&mut self) -> Result<(), TrainError> {
        let (steps, wanted) = (self.config.held_out_rollout_steps, self.config.held_out_state_count);
        if steps == 0 || wanted == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(3);
        let actions = self.env.action_count();
        let mut state = StackedState::padded(self.env.reset(), self.config.agent.stack);
        let mut visited = Vec::with_capacity(steps);
        for _ in 0..steps {
            visited.push(state.clone());
            let r = self.env.step(rng.gen_range(0..actions))?;
            state = if r.terminal {
                StackedState::padded(self.env.reset(), self.config.agent.stack)
            } else {
                state.pushed(r.observation)
            };
        }
        let stride = (visited.len() / wanted).max(1);
        self.held_out = visited.into_iter().step_by(stride).take(wanted).collect();
        Ok(())
    }

    fn begin(&mut self, start: Start) -> Result<StackedState, TrainError> {
        let obs = match start {
            Start::Canonical => self.env.reset(),
            Start::Checkpoint(record) => self.env.restore(&record.checkpoint)?,
        };
        Ok(StackedState::padded(obs, self.config.agent.stack))
    }

    fn update(&mut self) -> Result<(), TrainError> {
        let config = self.config;
        let batch: Vec<&Transition> = if config.mode == Mode::Her {
            self.stats.sample_dual_calls += 1;
            sample_dual(self.human.expect("checked"), &self.memory, config.k_h, config.k_a, &mut self.sample_rng)?
        } else {
            self.memory.sample(config.agent.batch_size, &mut self.sample_rng)?
        };
        let human = batch.iter().filter(|t| t.source == Source::Human).count();
        let agent = batch.len() - human;
        let loss = self.agent.q_learning_update(&config.agent, &batch)?;
        self.stats.updates += 1;
        *self.stats.batch_composition.entry(format!("{human}/{agent}")).or_default() += 1;
        self.period_losses.push(loss);
        if let Some(out) = &mut self.outputs {
            if let Some(batches) = &mut out.batches {
                #[derive(Serialize)]
                struct BatchLine {
                    update: u64,
                    frame: u64,
                    human: usize,
                    agent: usize,
                }
                let line = BatchLine { update: self.stats.updates, frame: self.agent.frame_counter, human, agent };
                append_line(batches, &line, &out.dir.join(BATCHES_FILE))?;
            }
        }
        Ok(())
    }

    fn record_metrics(&mut self) -> Result<(), TrainError> {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let record = MetricsRecord {
            frame: self.agent.frame_counter,
            avg_max_q: avg_max_q(&self.config.agent.spec, &self.agent.online, &self.held_out)?,
            mean_episode_score: mean(&self.period_scores),
            episode_count: self.stats.episodes,
            epsilon: self.config.agent.schedule.epsilon_at(self.agent.frame_counter),
            loss: mean(&self.period_losses),
        };
        self.period_scores.clear();
        self.period_losses.clear();
        if let Some(out) = &mut self.outputs {
            append_line(&mut out.metrics, &record, &out.dir.join(METRICS_FILE))?;
        }
        self.metrics.push(record);
        Ok(())
    }

    fn bundle_meta(&self) -> BundleMeta {
        BundleMeta {
            agent: self.config.agent.clone(),
            frame_counter: self.agent.frame_counter,
            env_kind: self.config.env.kind(),
            config_digest: self.config.env.digest(),
            training_pool_ids: self.training_pool_ids(),
            mode: Some(self.config.mode.as_str().to_string()),
        }
    }

    pub fn training_pool_ids(&self) -> Vec<String> {
        match (self.config.mode, self.pool) {
            (Mode::Hcr, Some(pool)) => pool.ids(Role::Train),
            _ => Vec::new(),
        }
    }

    /// Frame-driven bookkeeping after each agent step.
    fn after_step(&mut self) -> Result<(), TrainError> {
        let frame = self.agent.frame_counter;
        let config = self.config;
        if frame >= config.agent.learn_start && self.steps % config.agent.update_every == 0 {
            self.update()?;
        }
        while frame >= self.next_sync {
            self.agent.sync_target();
            self.next_sync += config.agent.target_sync_period;
        }
        if frame >= self.next_metrics {
            self.record_metrics()?;
            while self.next_metrics <= frame {
                self.next_metrics += config.metrics_period;
            }
        }
        if frame >= self.next_bundle {
            if let Some(out) = &self.outputs {
                let dir = out.dir.join("bundles").join(format!("frame-{frame:010}"));
                save_bundle(&dir, &self.bundle_meta(), &self.agent.online)?;
            }
            while self.next_bundle <= frame {
                self.next_bundle += config.bundle_period;
            }
        }
        Ok(())
    }

    /// Runs one episode from `start` for at most `cap` ticks, pushing every
    /// step into the agent memory and learning along the way.
    pub fn run_episode(&mut self, start: Start, cap: u64) -> Result<EpisodeRecord, TrainError> {
        if cap == 0 {
            return Err(TrainError::Config("episode cap must be positive".into()));
        }
        let config = self.config;
        let frame_start = self.agent.frame_counter;
        let mut state = self.begin(start)?;
        if self.env.is_terminal() {
            return Err(TrainError::Config("episode start state is terminal".into()));
        }
        let (mut ticks, mut decisions, mut score, mut terminal) = (0u64, 0u64, 0.0, false);
        while ticks < cap && !terminal {
            let epsilon = config.agent.schedule.epsilon_at(self.agent.frame_counter);
            let action = self.agent.act(&config.agent.spec, &state, epsilon)?;
            let limit = (cap - ticks).min(u32::MAX as u64) as u32;
            let r = self.env.step_limited(action, limit)?;
            ticks += r.ticks as u64;
            decisions += 1;
            score += r.reward;
            terminal = r.terminal;
            self.agent.frame_counter += r.ticks as u64;
            let next = state.pushed(r.observation);
            let reward = if config.agent.clip_rewards { r.reward.clamp(-1.0, 1.0) } else { r.reward };
            self.memory.push(Transition {
                state,
                action,
                reward,
                next_state: next.clone(),
                terminal,
                source: Source::Agent,
            })?;
            state = next;
            self.steps += 1;
            self.after_step()?;
        }
        let record = EpisodeRecord {
            episode: self.stats.episodes,
            start: match start {
                Start::Canonical => None,
                Start::Checkpoint(r) => Some(r.id.clone()),
            },
            frame_start,
            ticks,
            decisions,
            score,
            terminal,
        };
        self.stats.episodes += 1;
        self.stats.frames += ticks;
        self.stats.max_episode_ticks = self.stats.max_episode_ticks.max(ticks);
        self.period_scores.push(score);
        if let Some(out) = &mut self.outputs {
            append_line(&mut out.episodes, &record, &out.dir.join(EPISODES_FILE))?;
        }
        self.episodes.push(record.clone());
        Ok(record)
    }

    /// Runs episodes until the frame budget is spent.
    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        let config = self.config;
        if config.total_frames > 0 {
            self.collect_held_out()?;
        }
        let cap = config.episode_cap();
        while self.agent.frame_counter < config.total_frames {
            let remaining = config.total_frames - self.agent.frame_counter;
            let start = match config.mode {
                Mode::Hcr => {
                    self.stats.pool_sample_calls += 1;
                    let pool = self.pool.expect("checked");
                    Start::Checkpoint(pool.pool_sample(Role::Train, &mut self.sample_rng)?)
                }
                Mode::Vanilla | Mode::Her => Start::Canonical,
            };
            self.run_episode(start, cap.min(remaining))?;
        }
        if self.metrics.last().map_or(config.total_frames > 0, |m| m.frame < self.agent.frame_counter) {
            self.record_metrics()?;
        }
        if let Some(out) = &self.outputs {
            save_bundle(&out.dir.join(FINAL_BUNDLE_DIR), &self.bundle_meta(), &self.agent.online)?;
            let path = out.dir.join(SUMMARY_FILE);
            let text = serde_json::to_string_pretty(&self.stats).expect("stats serialize");
            fs::write(&path, text + "\n").map_err(io_err(&path))?;
        }
        let training_pool_ids = self.training_pool_ids();
        Ok(TrainOutcome {
            agent: self.agent,
            metrics: self.metrics,
            episodes: self.episodes,
            stats: self.stats,
            training_pool_ids,
        })
    }
}

/// Loads the human memory a HER run draws from: one transition log, or a
/// directory whose `*.jsonl` logs are read in file-name order.
pub fn load_human_memory(path: &Path, stack: usize, clip: bool) -> Result<ReplayMemory, TrainError> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut records = Vec::new();
    for file in &files {
        records.extend(read_transition_log(file)?);
    }
    Ok(ReplayMemory::frozen(log_to_transitions(&records, stack, clip))?)
}

/// Loads a training pool and checks that every train-role record restores to
/// a live (non-terminal) state under `env`.
pub fn load_training_pool(path: &Path, env: &EnvConfig) -> Result<CheckpointPool, TrainError> {
    let pool = CheckpointPool::load(path)?;
    if let Some(w) = pool.digest_warning(&env.digest()) {
        return Err(TrainError::Config(w.message));
    }
    for record in pool.with_role(Role::Train) {
        let (game, _) = Env::restore_new(env, &record.checkpoint)?;
        if game.is_terminal() {
            return Err(TrainError::Config(format!("checkpoint {} is a terminal state", record.id)));
        }
    }
    Ok(pool)
}

/// Full run on a built-in game: loads the referenced files, trains and
/// writes the output directory.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    config.env.validate()?;
    let pool = match (&config.mode, &config.pool_path) {
        (Mode::Hcr, Some(path)) => Some(load_training_pool(path, &config.env)?),
        _ => None,
    };
    let human = match (&config.mode, &config.human_transitions_path) {
        (Mode::Her, Some(path)) => Some(load_human_memory(path, config.agent.stack, config.agent.clip_rewards)?),
        _ => None,
    };
    let (env, _) = Env::reset_new(&config.env, config.seed)?;
    let s = env.observation_shape();
    let expected = [s.channels * config.agent.stack, s.height, s.width];
    if config.agent.spec.input != expected {
        return Err(TrainError::Config(format!(
            "network input {:?} does not match the stacked observation {:?}",
            config.agent.spec.input, expected
        )));
    }
    if let Some(h) = &human {
        if let Some(shape) = h.input_shape() {
            if shape != expected {
                return Err(TrainError::Config(format!("human transitions have shape {shape:?}, expected {expected:?}")));
            }
        }
    }
    Trainer::new(config, env, pool.as_ref(), human.as_ref())?.run()
}
