//! Tabular Q-learning against a true or learned reward.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{
    check_gamma, discounted_return, rollout, step, true_cell_reward, Action, ActionTable, Cell,
    EnvState, EpisodeId, GridSpec, Policy,
};
use crate::reward::{mean, population_std, Ensemble};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Start each training episode in a uniformly drawn non-terminal cell
    /// instead of the start cell.
    pub exploring_starts: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha: 0.5,
            gamma: 0.95,
            epsilon: 0.2,
            episodes: 20_000,
            seed: 0,
            exploring_starts: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Spec(format!(
                "alpha {} must lie in (0,1] and epsilon {} in [0,1]",
                self.alpha, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Reward the agent optimizes.
#[derive(Debug, Clone, Copy)]
pub enum RewardSource<'a> {
    Truth,
    /// Mean prediction of the ensemble members.
    EnsembleMean(&'a Ensemble),
}

impl RewardSource<'_> {
    /// Reward per cell index and action.
    pub fn table(&self, spec: &GridSpec) -> Vec<[f64; 4]> {
        (0..spec.cell_count())
            .map(|i| {
                let c = spec.cell_at(i);
                Action::ALL.map(|a| match self {
                    RewardSource::Truth => true_cell_reward(spec, c, a),
                    RewardSource::EnsembleMean(e) => e.cell_reward(spec, c, a),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAgent {
    /// Per cell index.
    pub q: Vec<[f64; 4]>,
    pub policy: ActionTable,
}

impl QAgent {
    pub fn greedy(&self) -> Policy {
        Policy::Greedy {
            table: self.policy.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&AgentCheckpoint {
            format: 1,
            agent: self.clone(),
        })
        .expect("agent serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: AgentCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: 0,
            message: format!("policy checkpoint: {e}"),
        })?;
        Ok(ck.agent)
    }
}

#[derive(Serialize, Deserialize)]
struct AgentCheckpoint {
    format: u32,
    agent: QAgent,
}

/// ε-greedy Q-learning from a zero table.
///
/// Episodes end at a terminal cell or after `spec.max_steps` steps; the
/// truncated last step still bootstraps. The greedy policy breaks exact ties
/// uniformly at random with the run's seed.
pub fn train_q(spec: &GridSpec, reward: RewardSource<'_>, cfg: &AgentConfig) -> Result<QAgent> {
    cfg.validate()?;
    spec.validate()?;
    let rewards = reward.table(spec);
    let mut q = vec![[0.0f64; 4]; spec.cell_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Cell> = spec
        .active_cells()
        .filter(|c| !spec.is_terminal(*c))
        .collect();
    if starts.is_empty() {
        return Err(Error::Spec("grid has no non-terminal cells".into()));
    }
    for episode in 0..cfg.episodes {
        let cell = if cfg.exploring_starts {
            starts[rng.random_range(0..starts.len())]
        } else {
            spec.start_cell
        };
        let mut state = EnvState {
            agent_cell: cell,
            step_index: 0,
            done: spec.is_terminal(cell),
        };
        while !state.done && state.step_index < spec.max_steps {
            let i = spec.cell_index(state.agent_cell);
            let action = if rng.random::<f64>() < cfg.epsilon {
                Action::ALL[rng.random_range(0..4)]
            } else {
                greedy_action(&q[i], &mut rng)
            };
            let t = step(spec, state, action)?;
            let future = if spec.is_terminal(t.next_state.agent_cell) {
                0.0
            } else {
                let next = &q[spec.cell_index(t.next_state.agent_cell)];
                next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let target = rewards[i][action.index()] + cfg.gamma * future;
            let entry = &mut q[i][action.index()];
            *entry += cfg.alpha * (target - *entry);
            if !entry.is_finite() {
                return Err(Error::Divergence { epoch: episode });
            }
            state = t.next_state;
        }
    }
    let actions = (0..spec.cell_count())
        .map(|i| greedy_action(&q[i], &mut rng))
        .collect();
    Ok(QAgent {
        q,
        policy: ActionTable {
            width: spec.width,
            height: spec.height,
            actions,
        },
    })
}

fn greedy_action(q: &[f64; 4], rng: &mut ChaCha8Rng) -> Action {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best: Vec<Action> = Action::ALL
        .into_iter()
        .filter(|a| q[a.index()] == max)
        .collect();
    if best.len() == 1 {
        best[0]
    } else {
        best[rng.random_range(0..best.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Discounted returns of seeded rollouts from the start cell.
pub fn evaluate(
    policy: &Policy,
    reward_fn: impl Fn(Cell, Action) -> f64,
    spec: &GridSpec,
    n_episodes: usize,
    seed: u64,
    gamma: f64,
) -> Result<Evaluation> {
    if n_episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let returns: Vec<f64> = (0..n_episodes)
        .map(|i| {
            let ep = rollout(
                spec,
                policy,
                EpisodeId(i as u64),
                seed.wrapping_add(i as u64),
                spec.max_steps,
            )?;
            Ok(discounted_return(&ep, &reward_fn, gamma))
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        mean: mean(&returns),
        std: population_std(&returns),
        n: n_episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{optimal_values, GridSpec};
    use std::collections::BTreeSet;

    fn open_grid() -> GridSpec {
        GridSpec {
            width: 5,
            height: 5,
            goal_cells: BTreeSet::from([Cell::new(4, 4)]),
            lava_cells: BTreeSet::new(),
            wall_cells: BTreeSet::new(),
            start_cell: Cell::new(0, 0),
            max_steps: 40,
            ..GridSpec::default()
        }
    }

    #[test]
    fn q_learning_matches_value_iteration() {
        let spec = open_grid();
        let cfg = AgentConfig::default();
        let agent = train_q(&spec, RewardSource::Truth, &cfg).unwrap();
        let truth = |c, a| true_cell_reward(&spec, c, a);
        let v = optimal_values(&spec, truth, cfg.gamma).unwrap();
        let got = evaluate(&agent.greedy(), truth, &spec, 1, 0, cfg.gamma).unwrap();
        assert!((got.mean - v.value(&spec, spec.start_cell)).abs() < 1e-6);
        assert_eq!(got.std, 0.0);
    }

    #[test]
    fn deterministic_and_zero_episode_runs() {
        let spec = open_grid();
        let cfg = AgentConfig {
            episodes: 50,
            ..AgentConfig::default()
        };
        let a = train_q(&spec, RewardSource::Truth, &cfg).unwrap();
        assert_eq!(a, train_q(&spec, RewardSource::Truth, &cfg).unwrap());
        let none = train_q(
            &spec,
            RewardSource::Truth,
            &AgentConfig { episodes: 0, ..cfg },
        )
        .unwrap();
        assert!(none.q.iter().all(|q| *q == [0.0; 4]));
        let distinct: BTreeSet<usize> = none.policy.actions.iter().map(|a| a.index()).collect();
        assert!(distinct.len() > 1);
        assert!(train_q(
            &spec,
            RewardSource::Truth,
            &AgentConfig { gamma: 1.0, ..cfg }
        )
        .is_err());
    }
}
