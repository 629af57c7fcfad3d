//! Breadth-first search over exact copies of a game, used by the scripted
//! demonstrator to find its way to the next reward.

use std::collections::{HashSet, VecDeque};

use crate::envs::{Env, EnvError, Environment};

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Vec<usize>,
    /// Reward collected by the final action.
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchLimits {
    /// Longest action sequence considered.
    pub max_depth: usize,
    /// Distinct states expanded before giving up.
    pub max_nodes: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self { max_depth: 300, max_nodes: 200_000 }
    }
}

/// Shortest action sequence from `env` to a positive reward. Paths that lose
/// a life or score are avoided when `cautious` is set; terminal states are
/// never expanded.
pub fn plan_to_reward(env: &Env, limits: SearchLimits, cautious: bool) -> Result<Option<Plan>, EnvError> {
    if env.is_terminal() {
        return Ok(None);
    }
    let mut seen = HashSet::new();
    seen.insert(env.dynamics_key());
    // Parent links live in `nodes`; each entry is (parent index, action).
    let mut nodes: Vec<(usize, usize)> = vec![(usize::MAX, usize::MAX)];
    let mut frontier = VecDeque::from([(env.clone(), 0usize, 0usize)]);
    while let Some((state, index, depth)) = frontier.pop_front() {
        if depth >= limits.max_depth || nodes.len() >= limits.max_nodes {
            continue;
        }
        let lives = state.info().lives;
        for action in 0..state.action_count() {
            let mut next = state.clone();
            let r = next.step(action)?;
            if r.reward > 0.0 {
                let mut actions = vec![action];
                let mut at = index;
                while at != 0 {
                    let (parent, a) = nodes[at];
                    actions.push(a);
                    at = parent;
                }
                actions.reverse();
                return Ok(Some(Plan { actions, reward: r.reward }));
            }
            if r.terminal || (cautious && (r.reward < 0.0 || r.info.lives < lives)) {
                continue;
            }
            if seen.insert(next.dynamics_key()) {
                nodes.push((index, action));
                frontier.push_back((next, nodes.len() - 1, depth + 1));
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;

    #[test]
    fn plan_reaches_the_first_labyrinth_reward() {
        let (env, _) = Env::reset_new(&EnvConfig::default_key_labyrinth(), 0).unwrap();
        let plan = plan_to_reward(&env, SearchLimits::default(), true).unwrap().expect("key reachable");
        let mut replay = env.clone();
        let mut total = 0.0;
        for &a in &plan.actions {
            total += replay.step(a).unwrap().reward;
        }
        assert_eq!(total, plan.reward);
        assert_eq!(plan.reward, 100.0);
    }

    #[test]
    fn depth_limit_can_make_rewards_unreachable() {
        let (env, _) = Env::reset_new(&EnvConfig::default_key_labyrinth(), 0).unwrap();
        let limits = SearchLimits { max_depth: 5, max_nodes: 10_000 };
        assert_eq!(plan_to_reward(&env, limits, true).unwrap(), None);
    }
}
