//! The Q-learning agent: ε-greedy action selection, TD targets against a
//! frozen target network, the squared-error update and hard target syncs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, StackedState};
use crate::nn::{
    backward_traced, forward, forward_traced, load_weights, rmsprop_step, save_weights, NetworkSpec, NnError,
    Parameters, RmsPropConfig, RmsPropState, Tensor,
};
use crate::replay::Transition;
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("batch of {found} transitions, expected {expected}")]
    BatchSize { expected: usize, found: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Linear ε decay from `initial` at frame 0 to `final` at
/// `final_exploration_frame`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_epsilon: f64,
    pub final_exploration_frame: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { initial: 1.0, final_epsilon: 0.1, final_exploration_frame: 4_000_000 }
    }
}

impl EpsilonSchedule {
    pub fn epsilon_at(&self, frame: u64) -> f64 {
        if frame >= self.final_exploration_frame {
            return self.final_epsilon;
        }
        let fraction = frame as f64 / self.final_exploration_frame as f64;
        self.initial + (self.final_epsilon - self.initial) * fraction
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.initial) || !unit(self.final_epsilon) || self.initial < self.final_epsilon {
            return Err(AgentError::Config(format!("epsilon schedule {self:?} must decrease within [0, 1]")));
        }
        if self.final_exploration_frame == 0 {
            return Err(AgentError::Config("final_exploration_frame must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    /// Frames between hard copies of the online parameters into the target.
    pub target_sync_period: u64,
    /// Frames of pure collection before the first update.
    pub learn_start: u64,
    /// Agent steps per gradient update.
    pub update_every: u64,
    pub clip_rewards: bool,
    /// Huber instead of squared error; off by default.
    #[serde(default)]
    pub huber: bool,
    pub schedule: EpsilonSchedule,
    /// Observations per network input.
    pub stack: usize,
    pub spec: NetworkSpec,
    pub optimizer: RmsPropConfig,
}

impl AgentConfig {
    /// Defaults for a game with the given single-frame shape and action count.
    pub fn for_game(frame: [usize; 3], action_count: usize, stack: usize) -> Self {
        let [c, h, w] = frame;
        Self {
            gamma: 0.99,
            batch_size: 32,
            target_sync_period: 10_000,
            learn_start: 5_000,
            update_every: 4,
            clip_rewards: true,
            huber: false,
            schedule: EpsilonSchedule::default(),
            stack,
            spec: NetworkSpec::default_q_network([c * stack, h, w], action_count),
            optimizer: RmsPropConfig::default(),
        }
    }

    pub fn action_count(&self) -> Result<usize, AgentError> {
        Ok(self.spec.output_units()?)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AgentError::Config(format!("gamma {} must lie in [0, 1)", self.gamma)));
        }
        if self.batch_size == 0 || self.target_sync_period == 0 || self.update_every == 0 || self.stack == 0 {
            return Err(AgentError::Config("batch size, periods and stack size must be positive".into()));
        }
        self.schedule.validate()?;
        self.optimizer.validate()?;
        let actions = self.action_count()?;
        self.spec.validate_q_network(actions)?;
        Ok(())
    }
}

/// Online and target parameters, optimizer state, frame counter and RNG.
#[derive(Debug, Clone)]
pub struct AgentState<T: Scalar> {
    pub online: Parameters<T>,
    target: Parameters<T>,
    pub optimizer: RmsPropState<T>,
    pub frame_counter: u64,
    pub rng: ChaCha8Rng,
}

/// Greedy choice; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Network input for a batch of states, shaped as the spec expects.
pub fn states_tensor<T: Scalar>(spec: &NetworkSpec, states: &[&StackedState]) -> Result<Tensor<T>, AgentError> {
    let per: usize = spec.input.iter().product();
    let mut data = vec![T::zero(); states.len() * per];
    for (i, s) in states.iter().enumerate() {
        if s.input_len() != per {
            return Err(NnError::ShapeMismatch {
                layer: "input".into(),
                detail: format!("state has {} values, network expects {per}", s.input_len()),
            }
            .into());
        }
        s.write_input(&mut data[i * per..(i + 1) * per]);
    }
    let mut shape = vec![states.len()];
    shape.extend_from_slice(&spec.input);
    Ok(Tensor::new(shape, data)?)
}

/// Q-values of every state, shape `(n, action_count)`.
pub fn q_values<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    states: &[&StackedState],
) -> Result<Tensor<T>, AgentError> {
    Ok(forward(spec, params, &states_tensor(spec, states)?)?)
}

/// ε-greedy action: uniform with probability `epsilon`, greedy otherwise.
pub fn select_action<T: Scalar, R: Rng>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    state: &StackedState,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, AgentError> {
    let actions = spec.output_units()?;
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..actions));
    }
    let q = q_values(spec, params, &[state])?;
    Ok(argmax(q.row(0)))
}

/// `r` for terminal transitions, `r + γ·max_a' Q(s', a'; θ⁻)` otherwise. The
/// network is only evaluated on successors of non-terminal transitions.
pub fn td_targets<T: Scalar>(
    spec: &NetworkSpec,
    target: &Parameters<T>,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    let open: Vec<&StackedState> = batch.iter().filter(|t| !t.terminal).map(|t| &t.next_state).collect();
    let next_q = if open.is_empty() { None } else { Some(q_values(spec, target, &open)?) };
    let mut row = 0;
    Ok(batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.reward
            } else {
                let q = next_q.as_ref().expect("evaluated");
                let best = q.row(row)[argmax(q.row(row))].to_f64().unwrap();
                row += 1;
                t.reward + gamma * best
            }
        })
        .collect())
}

/// Mean loss over the batch and its gradient. Only the chosen action's
/// output receives gradient; targets are constants.
pub fn loss_and_gradient<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    inputs: &Tensor<T>,
    actions: &[usize],
    targets: &[f64],
    huber: bool,
) -> Result<(f64, Parameters<T>), AgentError> {
    let trace = forward_traced(spec, params, inputs)?;
    let q = trace.output();
    let n = actions.len();
    let a_count = q.shape()[1];
    let mut grad = Tensor::zeros(q.shape().to_vec());
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let residual = y - q.row(i)[a].to_f64().unwrap();
        let (l, d) = if huber && residual.abs() > 1.0 {
            (residual.abs() - 0.5, -residual.signum())
        } else if huber {
            (0.5 * residual * residual, -residual)
        } else {
            (residual * residual, -2.0 * residual)
        };
        loss += l;
        grad.data_mut()[i * a_count + a] = T::lit(d / n as f64);
    }
    let grads = backward_traced(spec, params, &trace, &grad)?;
    Ok((loss / n as f64, grads))
}

impl<T: Scalar> AgentState<T> {
    pub fn new(config: &AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let online = Parameters::init(&config.spec, seed)?;
        let optimizer = RmsPropState::new(&online, config.optimizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self { target: online.clone(), online, optimizer, frame_counter: 0, rng })
    }

    /// Agent around existing parameters (for evaluation or tests).
    pub fn from_parameters(config: &AgentConfig, online: Parameters<T>, seed: u64) -> Result<Self, AgentError> {
        online.check_against(&config.spec)?;
        let optimizer = RmsPropState::new(&online, config.optimizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self { target: online.clone(), online, optimizer, frame_counter: 0, rng })
    }

    pub fn target(&self) -> &Parameters<T> {
        &self.target
    }

    /// ε-greedy action drawn with the agent's own RNG.
    pub fn act(&mut self, spec: &NetworkSpec, state: &StackedState, epsilon: f64) -> Result<usize, AgentError> {
        select_action(spec, &self.online, state, epsilon, &mut self.rng)
    }

    /// One gradient step on `batch`; returns the loss before the step.
    pub fn q_learning_update(&mut self, config: &AgentConfig, batch: &[&Transition]) -> Result<f64, AgentError> {
        if batch.len() != config.batch_size {
            return Err(AgentError::BatchSize { expected: config.batch_size, found: batch.len() });
        }
        let targets = td_targets(&config.spec, &self.target, batch, config.gamma)?;
        let states: Vec<&StackedState> = batch.iter().map(|t| &t.state).collect();
        let inputs = states_tensor(&config.spec, &states)?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grads) = loss_and_gradient(&config.spec, &self.online, &inputs, &actions, &targets, config.huber)?;
        rmsprop_step(&mut self.online, &grads, &mut self.optimizer)?;
        Ok(loss)
    }

    /// Hard copy of the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// Mean over states of the largest predicted action value.
pub fn avg_max_q<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    states: &[StackedState],
) -> Result<f64, AgentError> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in states.chunks(64) {
        let refs: Vec<&StackedState> = chunk.iter().collect();
        let q = q_values(spec, params, &refs)?;
        for i in 0..chunk.len() {
            let row = q.row(i);
            total += row[argmax(row)].to_f64().unwrap();
        }
    }
    Ok(total / states.len() as f64)
}

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const SIDECAR_FILE: &str = "agent.json";

/// Everything besides the weights that a saved agent carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub agent: AgentConfig,
    pub frame_counter: u64,
    pub env_kind: EnvKind,
    pub config_digest: String,
    /// Ids of the checkpoints the agent started training episodes from.
    #[serde(default)]
    pub training_pool_ids: Vec<String>,
    #[serde(default)]
    pub mode: Option<String>,
}

/// Writes `dir/weights.bin` and `dir/agent.json`.
pub fn save_bundle<T: Scalar>(dir: &Path, meta: &BundleMeta, online: &Parameters<T>) -> Result<(), AgentError> {
    let io = |e: std::io::Error| AgentError::Io { path: dir.display().to_string(), message: e.to_string() };
    fs::create_dir_all(dir).map_err(io)?;
    save_weights(online, &dir.join(WEIGHTS_FILE))?;
    let text = serde_json::to_string_pretty(meta).expect("bundle meta serializes");
    fs::write(dir.join(SIDECAR_FILE), text + "\n").map_err(io)
}

pub fn load_bundle<T: Scalar>(dir: &Path) -> Result<(BundleMeta, Parameters<T>), AgentError> {
    let sidecar = dir.join(SIDECAR_FILE);
    let err = |message: String| AgentError::Io { path: sidecar.display().to_string(), message };
    let text = fs::read_to_string(&sidecar).map_err(|e| err(e.to_string()))?;
    let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let params = load_weights::<T>(&dir.join(WEIGHTS_FILE))?;
    params.check_against(&meta.agent.spec)?;
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ObsShape, Observation};
    use crate::nn::{Activation, Layer};
    use crate::replay::Source;

    fn one_hot_state(index: usize, states: usize) -> StackedState {
        let codes = (0..states).map(|i| (i == index) as u8).collect();
        let obs = Observation::from_codes(ObsShape { channels: 2, height: 1, width: states }, codes).unwrap();
        StackedState::padded(obs, 1)
    }

    fn linear_config(inputs: usize, actions: usize) -> AgentConfig {
        let mut c = AgentConfig::for_game([2, 1, inputs], actions, 1);
        c.spec = NetworkSpec {
            input: vec![2 * inputs],
            layers: vec![Layer::Dense { units: actions, activation: Activation::Identity }],
        };
        c.batch_size = 1;
        c
    }

    #[test]
    fn epsilon_endpoints_and_midpoint() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.epsilon_at(0), 1.0);
        assert_eq!(s.epsilon_at(4_000_000), 0.1);
        assert_eq!(s.epsilon_at(9_000_000), 0.1);
        assert!((s.epsilon_at(2_000_000) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let config = linear_config(3, 2);
        let agent = AgentState::<f64>::new(&config, 0).unwrap();
        let s = one_hot_state(0, 3);
        let t = Transition { state: s.clone(), action: 0, reward: 5.0, next_state: s, terminal: true, source: Source::Agent };
        assert_eq!(td_targets(&config.spec, agent.target(), &[&t], 0.9).unwrap(), [5.0]);
    }

    #[test]
    fn non_terminal_target_adds_discounted_max() {
        let config = linear_config(3, 2);
        let mut params = Parameters::<f64>::zeros(&config.spec).unwrap();
        params.get_mut("dense0.bias").unwrap().data_mut().copy_from_slice(&[2.0, -1.0]);
        let s = one_hot_state(1, 3);
        let t = Transition { state: s.clone(), action: 1, reward: 1.0, next_state: s, terminal: false, source: Source::Agent };
        let y = td_targets(&config.spec, &params, &[&t], 0.9).unwrap();
        assert!((y[0] - 2.8).abs() < 1e-12);
    }

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0f32; 4]), 0);
    }

    #[test]
    fn dominant_action_is_always_chosen() {
        let config = linear_config(3, 5);
        let mut params = Parameters::<f32>::zeros(&config.spec).unwrap();
        params.get_mut("dense0.bias").unwrap().data_mut()[3] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = one_hot_state(2, 3);
        for _ in 0..50 {
            assert_eq!(select_action(&config.spec, &params, &s, 0.0, &mut rng).unwrap(), 3);
        }
    }

    #[test]
    fn single_transition_loss_by_hand() {
        let config = linear_config(2, 2);
        let mut agent = AgentState::<f64>::new(&config, 3).unwrap();
        let s = one_hot_state(0, 2);
        let q = q_values(&config.spec, &agent.online, &[&s]).unwrap().row(0)[1];
        let t = Transition { state: s.clone(), action: 1, reward: 0.5, next_state: s, terminal: true, source: Source::Agent };
        let loss = agent.q_learning_update(&config, &[&t]).unwrap();
        assert!((loss - (0.5 - q).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_leaves_parameters_but_decays_mean_square() {
        let config = linear_config(2, 2);
        let mut agent = AgentState::<f64>::new(&config, 4).unwrap();
        for (_, t) in agent.optimizer.mean_square_mut().iter_mut() {
            t.data_mut().fill(1.0);
        }
        let s = one_hot_state(1, 2);
        let q = q_values(&config.spec, &agent.online, &[&s]).unwrap().row(0)[0];
        let t = Transition { state: s.clone(), action: 0, reward: q, next_state: s, terminal: true, source: Source::Agent };
        let before = agent.online.clone();
        assert_eq!(agent.q_learning_update(&config, &[&t]).unwrap(), 0.0);
        assert_eq!(agent.online, before);
        for (_, ms) in agent.optimizer.mean_square().iter() {
            assert!(ms.data().iter().all(|&v| (v - 0.95).abs() < 1e-12));
        }
    }

    #[test]
    fn target_is_isolated_until_sync() {
        let config = linear_config(2, 2);
        let mut agent = AgentState::<f64>::new(&config, 5).unwrap();
        let s = one_hot_state(0, 2);
        let t = Transition { state: s.clone(), action: 0, reward: 1.0, next_state: s, terminal: true, source: Source::Agent };
        let frozen = agent.target().clone();
        agent.q_learning_update(&config, &[&t]).unwrap();
        assert_eq!(agent.target(), &frozen);
        assert_ne!(agent.online, frozen);
        agent.sync_target();
        assert_eq!(agent.target(), &agent.online);
        let once = agent.target().clone();
        agent.sync_target();
        assert_eq!(agent.target(), &once);
    }

    #[test]
    fn batch_size_is_enforced() {
        let config = linear_config(2, 2);
        let mut agent = AgentState::<f32>::new(&config, 0).unwrap();
        assert!(matches!(agent.q_learning_update(&config, &[]), Err(AgentError::BatchSize { expected: 1, found: 0 })));
    }

    #[test]
    fn zero_network_has_zero_average_max() {
        let config = linear_config(3, 2);
        let params = Parameters::<f32>::zeros(&config.spec).unwrap();
        let states: Vec<_> = (0..3).map(|i| one_hot_state(i, 3)).collect();
        assert_eq!(avg_max_q(&config.spec, &params, &states).unwrap(), 0.0);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = AgentConfig::for_game([9, 12, 12], 8, 4);
        let agent = AgentState::<f32>::new(&config, 1).unwrap();
        let meta = BundleMeta {
            agent: config,
            frame_counter: 1234,
            env_kind: EnvKind::KeyLabyrinth,
            config_digest: "00".repeat(32),
            training_pool_ids: vec!["a".into(), "b".into()],
            mode: Some("hcr".into()),
        };
        save_bundle(dir.path(), &meta, &agent.online).unwrap();
        let (m, p) = load_bundle::<f32>(dir.path()).unwrap();
        assert_eq!(m, meta);
        assert_eq!(p, agent.online);
    }
}
