//! Human-starts evaluation: a policy plays from held-back human checkpoints
//! with a fixed small ε, and raw game scores are averaged. Also the random
//! baseline and the side-by-side comparison table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{load_bundle, select_action, AgentError, BundleMeta};
use crate::envs::{EnvError, EnvKind, Environment, StackedState};
use crate::nn::{NetworkSpec, Parameters};
use crate::replay::{CheckpointPool, ReplayError, Role};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("evaluation pool shares checkpoint {id} with the policy's training pool")]
    Overlap { id: String },
    #[error("config digest mismatch: {what} was recorded under {found}, evaluation runs under {expected}")]
    DigestMismatch { what: String, expected: String, found: String },
    #[error("reports cannot be compared: {0}")]
    Incomparable(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub epsilon: f64,
    pub time_cap_ticks: u64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 100, epsilon: 0.05, time_cap_ticks: 5400, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.episodes == 0 {
            return Err(EvalError::Config("episodes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(EvalError::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.time_cap_ticks == 0 {
            return Err(EvalError::Config("time_cap_ticks must be positive".into()));
        }
        Ok(())
    }
}

/// What acts during evaluation.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Uniform action every decision; needs no weights.
    Random { action_count: usize },
    Agent { label: String, spec: NetworkSpec, params: Parameters<f32>, meta: BundleMeta },
}

impl Policy {
    /// Loads a saved agent; the label defaults to its training mode.
    pub fn from_bundle(dir: &Path) -> Result<Self, EvalError> {
        let (meta, params) = load_bundle::<f32>(dir)?;
        let label = meta.mode.clone().unwrap_or_else(|| "agent".into());
        Ok(Policy::Agent { label, spec: meta.agent.spec.clone(), params, meta })
    }

    pub fn label(&self) -> &str {
        match self {
            Policy::Random { .. } => "random",
            Policy::Agent { label, .. } => label,
        }
    }

    pub fn with_label(mut self, new: &str) -> Self {
        if let Policy::Agent { label, .. } = &mut self {
            *label = new.to_string();
        }
        self
    }

    fn stack(&self) -> usize {
        match self {
            Policy::Random { .. } => 1,
            Policy::Agent { meta, .. } => meta.agent.stack,
        }
    }

    fn act(&self, state: &StackedState, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<usize, EvalError> {
        match self {
            Policy::Random { action_count } => Ok(random_action(*action_count, rng)),
            Policy::Agent { spec, params, .. } => Ok(select_action(spec, params, state, epsilon, rng)?),
        }
    }
}

/// Uniform action index in `[0, action_count)`.
pub fn random_action<R: Rng>(action_count: usize, rng: &mut R) -> usize {
    assert!(action_count >= 1, "random_action needs at least one action");
    rng.gen_range(0..action_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub checkpoint_id: String,
    /// Raw, unclipped score change over the episode.
    pub score: f64,
    pub ticks: u64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub env_kind: EnvKind,
    pub config_digest: String,
    /// Hash of the sorted evaluation checkpoint ids.
    pub pool_fingerprint: String,
    pub config: EvalConfig,
    pub rows: Vec<EpisodeRow>,
    pub mean: f64,
    /// Sample standard deviation (zero for a single episode).
    pub std_dev: f64,
}

impl EvaluationReport {
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| EvalError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let err = |message: String| EvalError::Io { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// One-line summary for terminals.
    pub fn summary(&self) -> String {
        format!(
            "{}: mean {:.1} ± {:.1} over {} episodes on {}",
            self.policy,
            self.mean,
            self.std_dev,
            self.rows.len(),
            self.env_kind
        )
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Identifies an evaluation pool by its eval-role ids.
pub fn pool_fingerprint(pool: &CheckpointPool) -> String {
    let mut ids = pool.ids(Role::Eval);
    ids.sort();
    hex::encode(Sha256::digest(ids.join("\n").as_bytes()))
}

/// Plays `config.episodes` episodes from eval-role checkpoints of `pool`.
///
/// Each episode uses its own RNG derived from `(seed, episode index)`. When
/// the episode count equals the number of eval checkpoints every checkpoint
/// is used exactly once, in a seeded order; otherwise starts are drawn
/// uniformly with replacement.
pub fn evaluate_human_starts<E: Environment>(
    policy: &Policy,
    env: &mut E,
    env_digest: &str,
    pool: &CheckpointPool,
    config: &EvalConfig,
) -> Result<EvaluationReport, EvalError> {
    config.validate()?;
    let eval: Vec<_> = pool.with_role(Role::Eval).collect();
    if eval.is_empty() {
        return Err(ReplayError::EmptyRole(Role::Eval).into());
    }
    if pool.config_digest() != env_digest {
        return Err(EvalError::DigestMismatch {
            what: "checkpoint pool".into(),
            expected: env_digest.into(),
            found: pool.config_digest().into(),
        });
    }
    if let Policy::Agent { meta, spec, .. } = policy {
        if meta.config_digest != env_digest {
            return Err(EvalError::DigestMismatch {
                what: "agent bundle".into(),
                expected: env_digest.into(),
                found: meta.config_digest.clone(),
            });
        }
        if let Some(id) = pool.overlap(Role::Eval, &meta.training_pool_ids).first() {
            return Err(EvalError::Overlap { id: id.to_string() });
        }
        let actions = spec.output_units().map_err(AgentError::from)?;
        if actions != env.action_count() {
            return Err(EvalError::Config(format!("agent has {actions} actions, game has {}", env.action_count())));
        }
    }
    let one_each = config.episodes == eval.len();
    let order: Vec<usize> = if one_each {
        let mut order: Vec<usize> = (0..eval.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        order
    } else {
        Vec::new()
    };
    let mut rows = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(episode as u64 + 1);
        let record = if one_each { eval[order[episode]] } else { eval[rng.gen_range(0..eval.len())] };
        let obs = env.restore(&record.checkpoint)?;
        let mut state = StackedState::padded(obs, policy.stack());
        let (mut ticks, mut score, mut terminal) = (0u64, 0.0, env.is_terminal());
        while ticks < config.time_cap_ticks && !terminal {
            let action = policy.act(&state, config.epsilon, &mut rng)?;
            let limit = (config.time_cap_ticks - ticks).min(u32::MAX as u64) as u32;
            let r = env.step_limited(action, limit)?;
            ticks += r.ticks as u64;
            score += r.reward;
            terminal = r.terminal;
            state = state.pushed(r.observation);
        }
        rows.push(EpisodeRow { episode, checkpoint_id: record.id.clone(), score, ticks, terminal });
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let (mean, std_dev) = mean_and_std(&scores);
    Ok(EvaluationReport {
        policy: policy.label().to_string(),
        env_kind: pool.env_kind(),
        config_digest: env_digest.to_string(),
        pool_fingerprint: pool_fingerprint(pool),
        config: config.clone(),
        rows,
        mean,
        std_dev,
    })
}

/// Mean scores of several policies, one row per game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub env: String,
    /// Mean score per column; `None` where a policy was not evaluated.
    pub means: Vec<Option<f64>>,
}

/// Groups reports by game; within a game every report must share the config
/// digest and the evaluation pool.
pub fn compare(reports: &[EvaluationReport]) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::Incomparable(format!("need at least two reports, got {}", reports.len())));
    }
    let mut columns: Vec<String> = Vec::new();
    let mut envs: Vec<(EnvKind, &EvaluationReport)> = Vec::new();
    for r in reports {
        if !columns.contains(&r.policy) {
            columns.push(r.policy.clone());
        }
        match envs.iter().find(|(k, _)| *k == r.env_kind) {
            Some((_, first)) => {
                if first.config_digest != r.config_digest {
                    return Err(EvalError::Incomparable(format!(
                        "{} reports use config digests {} and {}",
                        r.env_kind, first.config_digest, r.config_digest
                    )));
                }
                if first.pool_fingerprint != r.pool_fingerprint {
                    return Err(EvalError::Incomparable(format!(
                        "{} reports '{}' and '{}' use different evaluation pools",
                        r.env_kind, first.policy, r.policy
                    )));
                }
            }
            None => envs.push((r.env_kind, r)),
        }
    }
    let rows = envs
        .iter()
        .map(|(kind, _)| ComparisonRow {
            env: kind.to_string(),
            means: columns
                .iter()
                .map(|c| {
                    let matching: Vec<f64> =
                        reports.iter().filter(|r| r.env_kind == *kind && &r.policy == c).map(|r| r.mean).collect();
                    (!matching.is_empty()).then(|| matching.iter().sum::<f64>() / matching.len() as f64)
                })
                .collect(),
        })
        .collect();
    Ok(Comparison { columns, rows })
}

impl Comparison {
    /// Aligned plain-text table, one decimal place.
    pub fn to_table(&self) -> String {
        let mut header = vec!["game".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut lines = vec![header];
        for row in &self.rows {
            let mut line = vec![row.env.clone()];
            line.extend(row.means.iter().map(|m| m.map_or("-".to_string(), |v| format!("{v:.1}"))));
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  "));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(policy: &str, mean: f64) -> EvaluationReport {
        EvaluationReport {
            policy: policy.into(),
            env_kind: EnvKind::KeyLabyrinth,
            config_digest: "d".into(),
            pool_fingerprint: "p".into(),
            config: EvalConfig::default(),
            rows: vec![EpisodeRow { episode: 0, checkpoint_id: "a".into(), score: mean, ticks: 4, terminal: false }],
            mean,
            std_dev: 0.0,
        }
    }

    #[test]
    fn table_lays_out_one_row_per_game() {
        let table = compare(&[report("random", 177.1), report("hcr", 379.1), report("her", 218.0)]).unwrap();
        assert_eq!(table.columns, ["random", "hcr", "her"]);
        let text = table.to_table();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "game           random    hcr    her");
        assert_eq!(lines[1], "key-labyrinth   177.1  379.1  218.0");
    }

    #[test]
    fn two_reports_give_one_by_two() {
        let c = compare(&[report("random", 1.0), report("hcr", 2.0)]).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].means, [Some(1.0), Some(2.0)]);
    }

    #[test]
    fn mismatched_digests_or_pools_are_refused() {
        let mut other = report("hcr", 2.0);
        other.config_digest = "e".into();
        assert!(matches!(compare(&[report("random", 1.0), other]), Err(EvalError::Incomparable(_))));
        let mut other = report("hcr", 2.0);
        other.pool_fingerprint = "q".into();
        assert!(matches!(compare(&[report("random", 1.0), other]), Err(EvalError::Incomparable(_))));
        assert!(compare(&[report("random", 1.0)]).is_err());
    }

    #[test]
    fn single_action_is_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| random_action(1, &mut rng) == 0));
    }

    #[test]
    fn random_actions_repeat_under_a_seed() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| random_action(8, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn spread_uses_the_sample_formula() {
        let (m, s) = mean_and_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_and_std(&[5.0]), (5.0, 0.0));
    }
}
