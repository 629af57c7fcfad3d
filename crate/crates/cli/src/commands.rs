//! Subcommands of the `hcr` binary. Each takes its parsed arguments and
//! writes human-readable progress to stdout; errors propagate to `main`,
//! which prints them and exits nonzero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hcr_core::envs::{Env, EnvConfig, EnvKind, Environment};
use hcr_core::evaluation::{compare, evaluate_human_starts, EvalConfig, EvaluationReport, Policy};
use hcr_core::replay::{CheckpointPool, ReplayError, Role};
use hcr_core::training::{train, Mode, TrainConfig};

use crate::demonstrator::{demonstrate, DemoConfig};
use crate::recorder::RecorderConfig;
use crate::transport::{RecorderServer, ADDR_ENV, DEFAULT_ADDR};

#[derive(Debug, Parser)]
#[command(name = "hcr", version, about = "Deep Q-learning from human checkpoints on checkpointable grid games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write its run directory.
    Train(TrainArgs),
    /// Evaluate a trained agent (or the random baseline) from human starts.
    Eval(EvalArgs),
    /// Tabulate mean scores from several evaluation reports.
    Compare(CompareArgs),
    /// Inspect or split a checkpoint pool.
    #[command(subcommand)]
    Pool(PoolCommand),
    /// Run the recorder service the browser client connects to.
    Serve(ServeArgs),
    /// Record sessions with the scripted demonstrator.
    Demonstrate(DemonstrateArgs),
    /// Print a game config (built-in name or file) as TOML, with its digest.
    Config { env: String },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// vanilla, hcr or her.
    #[arg(long)]
    pub mode: String,
    /// Built-in game name or path to a game config file.
    #[arg(long, default_value = "key-labyrinth")]
    pub env: String,
    /// Checkpoint pool (hcr); episodes start from its train-role records.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Transition log, or a directory of them (her).
    #[arg(long)]
    pub human: Option<PathBuf>,
    /// Tick budget for the run.
    #[arg(long, default_value_t = 2_000_000)]
    pub frames: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub learn_start: Option<u64>,
    /// Frame at which exploration reaches its final value.
    #[arg(long)]
    pub final_exploration_frame: Option<u64>,
    #[arg(long)]
    pub target_sync: Option<u64>,
    #[arg(long)]
    pub memory_capacity: Option<usize>,
    #[arg(long)]
    pub metrics_period: Option<u64>,
    /// Tick cap per training episode.
    #[arg(long)]
    pub episode_cap: Option<u64>,
    /// Lift the episode cap for vanilla and her runs.
    #[arg(long)]
    pub uncapped: bool,
    /// Human transitions per her batch.
    #[arg(long)]
    pub k_h: Option<usize>,
    /// Agent transitions per her batch.
    #[arg(long)]
    pub k_a: Option<usize>,
    /// Frames between intermediate bundles (0 = final bundle only).
    #[arg(long)]
    pub bundle_period: Option<u64>,
    /// Skip the per-update batch log.
    #[arg(long)]
    pub no_batch_log: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Agent bundle directory, e.g. `run1/final`.
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    pub bundle: Option<PathBuf>,
    /// Built-in policy instead of a bundle; only `random` exists.
    #[arg(long)]
    pub policy: Option<String>,
    /// Pool whose eval-role records are the starting states.
    #[arg(long)]
    pub pool: PathBuf,
    /// Game config; defaults to the built-in game the pool was recorded on.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    /// Tick cap per evaluation episode.
    #[arg(long, default_value_t = 5400)]
    pub cap: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label for the report; defaults to the bundle's training mode.
    #[arg(long)]
    pub label: Option<String>,
    /// Where to write the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum PoolCommand {
    /// Count records per role and per recording session.
    Inspect { pool: PathBuf },
    /// Reassign roles by seeded shuffle.
    Split {
        pool: PathBuf,
        /// Fraction of records that become eval-role.
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write here instead of rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "key-labyrinth")]
    pub env: String,
    #[arg(long, env = ADDR_ENV, default_value = DEFAULT_ADDR)]
    pub addr: String,
    /// Directory for per-session transition logs.
    #[arg(long, default_value = "sessions")]
    pub log_dir: PathBuf,
    /// Pool file that marked checkpoints are appended to.
    #[arg(long, default_value = "pool.jsonl")]
    pub pool: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemonstrateArgs {
    #[arg(long, default_value = "key-labyrinth")]
    pub env: String,
    /// Recorder to connect to; without it a private recorder is started
    /// that writes to `--log-dir` and `--pool`.
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long, default_value = "sessions")]
    pub log_dir: PathBuf,
    #[arg(long, default_value = "pool.jsonl")]
    pub pool: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub sessions: usize,
    /// Chance per decision of a random key.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Decisions between checkpoint marks (0 = never).
    #[arg(long, default_value_t = 5)]
    pub mark_every: usize,
    #[arg(long, default_value_t = 600)]
    pub max_inputs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Pool(PoolCommand::Inspect { pool }) => {
            print!("{}", inspect_pool(&pool)?);
            Ok(())
        }
        Command::Pool(PoolCommand::Split { pool, ratio, seed, out }) => cmd_split(&pool, ratio, seed, out.as_deref()),
        Command::Serve(a) => cmd_serve(a),
        Command::Demonstrate(a) => cmd_demonstrate(a),
        Command::Config { env } => {
            let config = load_env(&env)?;
            println!("# digest {}", config.digest());
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

/// A built-in game name or a config file path.
pub fn load_env(reference: &str) -> anyhow::Result<EnvConfig> {
    match EnvKind::parse(reference) {
        Some(kind) => Ok(EnvConfig::default_for(kind)),
        None => EnvConfig::load(Path::new(reference)).with_context(|| format!("loading game config {reference}")),
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mode = Mode::parse(&a.mode).with_context(|| format!("unknown --mode {:?} (vanilla, hcr, her)", a.mode))?;
    match mode {
        Mode::Hcr if a.pool.is_none() => bail!("--mode hcr requires --pool <FILE>"),
        Mode::Her if a.human.is_none() => bail!("--mode her requires --human <FILE|DIR>"),
        _ => {}
    }
    let env = load_env(&a.env)?;
    let mut config = TrainConfig::for_env(mode, env)?;
    config.total_frames = a.frames;
    config.seed = a.seed;
    config.output_dir = Some(a.out.clone());
    config.pool_path = a.pool;
    config.human_transitions_path = a.human;
    config.cap_all_modes = !a.uncapped;
    config.log_batches = !a.no_batch_log;
    let agent = &mut config.agent;
    if let Some(v) = a.learn_start {
        agent.learn_start = v;
    }
    if let Some(v) = a.final_exploration_frame {
        agent.schedule.final_exploration_frame = v;
    }
    if let Some(v) = a.target_sync {
        agent.target_sync_period = v;
    }
    if let Some(v) = a.memory_capacity {
        config.memory_capacity = v;
    }
    if let Some(v) = a.metrics_period {
        config.metrics_period = v;
    }
    if let Some(v) = a.episode_cap {
        config.episode_frame_cap = v;
    }
    if let Some(v) = a.k_h {
        config.k_h = v;
    }
    if let Some(v) = a.k_a {
        config.k_a = v;
    }
    if let Some(v) = a.bundle_period {
        config.bundle_period = v;
    }
    let outcome = train(&config)?;
    let scores: Vec<f64> = outcome.episodes.iter().map(|e| e.score).collect();
    let mean = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    println!(
        "{} run: {} frames, {} episodes, {} updates, mean episode score {mean:.1}",
        mode.as_str(),
        outcome.stats.frames,
        outcome.stats.episodes,
        outcome.stats.updates
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let pool = CheckpointPool::load(&a.pool)?;
    let env_config = match &a.env {
        Some(r) => load_env(r)?,
        None => EnvConfig::default_for(pool.env_kind()),
    };
    let (mut env, _) = Env::reset_new(&env_config, env_config.seed())?;
    let policy = match (&a.bundle, a.policy.as_deref()) {
        (Some(dir), _) => Policy::from_bundle(dir)?,
        (None, Some("random")) => Policy::Random { action_count: env.action_count() },
        (None, Some(other)) => bail!("unknown --policy {other:?}; only random is built in"),
        (None, None) => bail!("one of --bundle or --policy is required"),
    };
    let policy = match &a.label {
        Some(l) => policy.with_label(l),
        None => policy,
    };
    let config = EvalConfig { episodes: a.episodes, epsilon: a.epsilon, time_cap_ticks: a.cap, seed: a.seed };
    let report = evaluate_human_starts(&policy, &mut env, &env_config.digest(), &pool, &config)?;
    println!("{}", report.summary());
    if let Some(out) = &a.out {
        report.save(out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<()> {
    let reports = a.reports.iter().map(|p| EvaluationReport::load(p)).collect::<Result<Vec<_>, _>>()?;
    let table = compare(&reports)?;
    if a.json {
        println!("{}", table.to_json());
    } else {
        print!("{}", table.to_table());
    }
    Ok(())
}

/// Per-role and per-session counts. An empty pool file yields all zeros.
pub fn inspect_pool(path: &Path) -> anyhow::Result<String> {
    let records = match CheckpointPool::load(path) {
        Ok(pool) => pool.records().to_vec(),
        Err(ReplayError::EmptyPool(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let count = |role: Role| records.iter().filter(|r| r.role == role).count();
    let mut sessions: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
    for r in &records {
        let slot = sessions.entry(r.source_session.as_str()).or_default();
        slot[usize::from(r.role == Role::Eval)] += 1;
    }
    let mut out = String::new();
    writeln!(out, "{}", path.display())?;
    if let Some(r) = records.first() {
        writeln!(out, "game: {} ({})", r.checkpoint.env_kind, r.checkpoint.config_digest)?;
    }
    writeln!(out, "records: {}", records.len())?;
    writeln!(out, "  train: {}", count(Role::Train))?;
    writeln!(out, "  eval: {}", count(Role::Eval))?;
    writeln!(out, "sessions: {}", sessions.len())?;
    for (session, [train, eval]) in &sessions {
        writeln!(out, "  {session}: train {train}, eval {eval}")?;
    }
    Ok(out)
}

fn cmd_split(path: &Path, ratio: f64, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        bail!("--ratio {ratio} outside [0, 1]");
    }
    let pool = CheckpointPool::load(path)?;
    let eval_count = (pool.len() as f64 * ratio).round() as usize;
    let split = pool.split(eval_count, seed)?;
    let target = out.unwrap_or(path);
    split.save(target)?;
    println!(
        "{}: {} train, {} eval",
        target.display(),
        split.count(Role::Train),
        split.count(Role::Eval)
    );
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> anyhow::Result<()> {
    let env = load_env(&a.env)?;
    let config = RecorderConfig { env, log_dir: Some(a.log_dir), pool_path: Some(a.pool) };
    let server = RecorderServer::bind(&a.addr, config)?;
    println!("recorder listening on {}", server.local_addr());
    server.run();
    Ok(())
}

fn cmd_demonstrate(a: DemonstrateArgs) -> anyhow::Result<()> {
    let env = load_env(&a.env)?;
    let config = DemoConfig {
        sessions: a.sessions,
        noise: a.noise,
        mark_every: a.mark_every,
        max_inputs: a.max_inputs,
        seed: a.seed,
        ..DemoConfig::default()
    };
    let summaries = match &a.addr {
        Some(addr) => demonstrate(addr, &env, &config)?,
        None => {
            let recorder = RecorderConfig { env: env.clone(), log_dir: Some(a.log_dir.clone()), pool_path: Some(a.pool.clone()) };
            let server = RecorderServer::bind("127.0.0.1:0", recorder)?.spawn();
            let result = demonstrate(&server.addr.to_string(), &env, &config);
            server.stop();
            result?
        }
    };
    for s in &summaries {
        println!(
            "{}: {} inputs, {} checkpoints, score {} at tick {}",
            s.session,
            s.transitions,
            s.checkpoints.len(),
            s.final_score,
            s.final_tick
        );
    }
    Ok(())
}
