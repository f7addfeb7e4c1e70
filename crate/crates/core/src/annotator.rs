//! Simulated annotators answering from the hidden reward.
//!
//! Choices follow a Boltzmann-rational model over true option values;
//! value-type answers are the true value plus bias, drift and Gaussian noise,
//! clipped and quantized to the widget's domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{vars, InteractionKind, Measurement, Target, Variable};
use crate::gridworld::{
    dot, optimal_values, step, true_cell_reward, true_reward, Action, Cell, EnvState, Episode,
    GridSpec, ValueTable,
};
use crate::query::Query;
use crate::store::EpisodeStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Reported as the annotator id.
    pub name: String,
    /// Boltzmann rationality β.
    pub rationality: f64,
    /// Perfectly rational (argmax) choices; overrides `rationality`.
    pub deterministic: bool,
    pub noise_sigma: f64,
    pub mislabel_prob: f64,
    pub asymmetry_bias: f64,
    /// Added per answered query.
    pub drift_per_step: f64,
    /// Probability of acting on a salient segment unprompted.
    pub availability: f64,
    pub skill: f64,
    pub seed: u64,
    pub response_time_ms: f64,
    /// Window length for salience detection in proactive feedback.
    pub salience_window: usize,
    pub salience_quantile: f64,
    /// Discount used for action values behind advice and demonstrations.
    pub gamma: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            name: "oracle".into(),
            rationality: 10.0,
            deterministic: false,
            noise_sigma: 0.0,
            mislabel_prob: 0.0,
            asymmetry_bias: 0.0,
            drift_per_step: 0.0,
            availability: 0.0,
            skill: 1.0,
            seed: 0,
            response_time_ms: 2_000.0,
            salience_window: 4,
            salience_quantile: 0.9,
            gamma: 0.95,
        }
    }
}

impl OracleConfig {
    /// Noiseless argmax annotator.
    pub fn rational(seed: u64) -> Self {
        OracleConfig {
            deterministic: true,
            seed,
            ..OracleConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.rationality >= 0.0 && self.rationality.is_finite()) {
            errors.push("rationality must be finite and >= 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            errors.push("noise_sigma must be finite and >= 0");
        }
        if !unit(self.mislabel_prob) || !unit(self.availability) || !unit(self.skill) {
            errors.push("mislabel_prob, availability and skill must lie in [0,1]");
        }
        if !self.asymmetry_bias.is_finite() || !self.drift_per_step.is_finite() {
            errors.push("asymmetry_bias and drift_per_step must be finite");
        }
        if self.salience_window == 0 || !unit(self.salience_quantile) {
            errors.push("salience window must be >= 1 and quantile in [0,1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errors.push("gamma must lie in (0,1)");
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(
                errors.into_iter().map(String::from).collect(),
            ))
        }
    }
}

/// One simulated annotator with its own random stream.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub cfg: OracleConfig,
    spec: GridSpec,
    values: ValueTable,
    rng: ChaCha8Rng,
    /// Queries answered so far; drives drift.
    answered: u64,
}

impl Oracle {
    /// The hidden reward is `spec.true_weights`.
    pub fn new(cfg: OracleConfig, spec: &GridSpec) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let values = optimal_values(spec, |c, a| true_cell_reward(spec, c, a), cfg.gamma)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Oracle {
            cfg,
            spec: spec.clone(),
            values,
            rng,
            answered: 0,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Mean true reward over the state-actions a target covers.
    pub fn true_value(&self, store: &EpisodeStore, target: &Target) -> Result<f64> {
        let rows = store.resolve(target)?;
        Ok(rows
            .iter()
            .map(|x| dot(&self.spec.true_weights, x))
            .sum::<f64>()
            / rows.len() as f64)
    }

    fn beta(&self) -> f64 {
        if self.cfg.deterministic {
            f64::INFINITY
        } else {
            self.cfg.rationality
        }
    }

    /// Index drawn with probability proportional to `exp(beta * v)`.
    /// Infinite `beta` picks the first maximum.
    fn boltzmann(&mut self, values: &[f64], beta: f64) -> usize {
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if beta.is_infinite() {
            return values.iter().position(|v| *v == max).unwrap_or(0);
        }
        let w: Vec<f64> = values.iter().map(|v| (beta * (v - max)).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return i;
            }
            u -= wi;
        }
        values.len() - 1
    }

    fn noisy(&mut self, truth: f64) -> f64 {
        let noise = if self.cfg.noise_sigma > 0.0 {
            Normal::new(0.0, self.cfg.noise_sigma)
                .expect("validated sigma")
                .sample(&mut self.rng)
        } else {
            0.0
        };
        truth + self.cfg.asymmetry_bias + self.cfg.drift_per_step * self.answered as f64 + noise
    }

    fn mislabel(&mut self) -> bool {
        self.rng.random::<f64>() < self.cfg.mislabel_prob
    }

    fn contextual(&self, m: Measurement) -> Measurement {
        m.with_context(vars::ANNOTATOR_ID, Variable::Text(self.cfg.name.clone()))
            .with_context(
                vars::RESPONSE_TIME_MS,
                Variable::Scalar(self.cfg.response_time_ms),
            )
            .with_context(
                vars::SKILL_ANSWER,
                Variable::Scalar(if self.cfg.skill >= 0.5 { 1.0 } else { -1.0 }),
            )
    }

    /// Answer to a query, legal for the query's interaction kind.
    pub fn respond(&mut self, query: &Query, store: &EpisodeStore) -> Result<Measurement> {
        if query.targets.is_empty() && query.kind != InteractionKind::MetaAnswer {
            return Err(Error::Usage("query without targets".into()));
        }
        let mut m = Measurement::new(query.targets.clone());
        m.query_id = Some(query.query_id);
        let m = match query.kind {
            InteractionKind::PairwiseChoice => {
                let [a, b] = query.targets.as_slice() else {
                    return Err(Error::Usage("pairwise choice needs two targets".into()));
                };
                let v = [self.true_value(store, a)?, self.true_value(store, b)?];
                let mut choice = if self.cfg.deterministic && (v[0] - v[1]).abs() <= TIE_TOLERANCE {
                    -1
                } else {
                    self.boltzmann(&v, self.beta()) as i64
                };
                if self.mislabel() {
                    choice = self.rng.random_range(0..2);
                }
                m.with(vars::CHOICE, Variable::Index(choice))
            }
            InteractionKind::RankingList => {
                let v: Vec<f64> = query
                    .targets
                    .iter()
                    .map(|t| self.true_value(store, t))
                    .collect::<Result<_>>()?;
                let mut order = self.rank(&v);
                if self.mislabel() {
                    let mut idx: Vec<usize> = (0..v.len()).collect();
                    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut self.rng);
                    order = idx.into_iter().map(|i| vec![i]).collect();
                }
                m.with(vars::ORDER, Variable::Order(order))
            }
            InteractionKind::ActionAdvice => {
                let Some(Target::StateAction { cell, action, .. }) = query.targets.first() else {
                    return Err(Error::Usage(
                        "action advice needs a state-action target".into(),
                    ));
                };
                let options: Vec<Action> =
                    Action::ALL.into_iter().filter(|a| a != action).collect();
                let q = self.q_values(*cell);
                let v: Vec<f64> = options.iter().map(|a| q[a.index()]).collect();
                let mut pick = self.boltzmann(&v, self.beta());
                if self.mislabel() {
                    pick = self.rng.random_range(0..options.len());
                }
                m.with(
                    vars::ADVISED_ACTION,
                    Variable::Index(options[pick].index() as i64),
                )
            }
            InteractionKind::CritiqueButton => {
                let v = self.noisy(self.true_value(store, &query.targets[0])?);
                let mut option = if v >= 0.0 { 1.0 } else { -1.0 };
                if self.mislabel() {
                    option = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
                }
                m.with(vars::OPTION, Variable::Scalar(option))
            }
            InteractionKind::RatingSlider => {
                let v = self
                    .noisy(self.true_value(store, &query.targets[0])?)
                    .clamp(-1.0, 1.0);
                let wrong = self.mislabel();
                match query.levels {
                    Some(k) if k >= 2 => {
                        let mut level = (((v + 1.0) / 2.0 * (k - 1) as f64).round() as i64 + 1)
                            .clamp(1, k as i64);
                        if wrong {
                            level = self.rng.random_range(1..=k as i64);
                        }
                        m.with(vars::LEVEL, Variable::Index(level))
                            .with(vars::LEVELS, Variable::Index(k as i64))
                    }
                    _ => {
                        let v = if wrong {
                            self.rng.random_range(-1.0..=1.0)
                        } else {
                            v
                        };
                        m.with(vars::VALUE, Variable::Scalar(v))
                    }
                }
            }
            InteractionKind::Demonstration => {
                let (start, horizon) = self.start_of(store, &query.targets[0])?;
                let demo = self.demonstrate(start, horizon)?;
                let mut demo = Measurement {
                    query_id: m.query_id,
                    ..demo
                };
                demo.targets.clear();
                demo
            }
            InteractionKind::SegmentCorrection => {
                let (start, horizon) = self.start_of(store, &query.targets[0])?;
                let actions = self.boltzmann_actions(start, horizon, self.beta())?;
                m.with(vars::START, Variable::Cells(vec![start.agent_cell]))
                    .with(vars::ACTIONS, Variable::Actions(actions))
            }
            InteractionKind::FeatureBrush => {
                let Some(Target::FeatureSet { features, mask }) = query.targets.first() else {
                    return Err(Error::Usage(
                        "feature brush needs a feature-set target".into(),
                    ));
                };
                let weight: f64 = features.iter().map(|i| self.spec.true_weights[*i]).sum();
                let mut valence = if self.noisy(weight) >= 0.0 { 1.0 } else { -1.0 };
                if self.mislabel() {
                    valence = -valence;
                }
                let mut m = Measurement::new(vec![])
                    .with(
                        vars::FEATURES,
                        Variable::Indices(features.iter().copied().collect()),
                    )
                    .with(vars::VALENCE, Variable::Scalar(valence));
                m.query_id = Some(query.query_id);
                if let Some(cells) = mask {
                    m = m.with(
                        vars::CELLS,
                        Variable::Cells(cells.iter().copied().collect()),
                    );
                }
                m
            }
            InteractionKind::VerbalComment => {
                let v = self.noisy(self.true_value(store, &query.targets[0])?);
                let word = if v > 0.0 {
                    "good"
                } else if v < 0.0 {
                    "bad"
                } else {
                    "okay"
                };
                m.with(vars::TOKENS, Variable::Tokens(vec![word.into()]))
            }
            InteractionKind::ReactionSignal => {
                let truth = self.true_value(store, &query.targets[0])?;
                let samples = (0..10).map(|_| self.noisy(truth)).collect();
                m.with(vars::SAMPLES, Variable::Signal(samples))
            }
            InteractionKind::MetaAnswer => m.with(
                vars::DISTINGUISHABILITY_ANSWER,
                Variable::Scalar(if self.cfg.noise_sigma < 0.5 {
                    1.0
                } else {
                    -1.0
                }),
            ),
        };
        self.answered += 1;
        Ok(self.contextual(m))
    }

    /// Plackett-Luce ranking; under argmax choice, equal values share a group.
    fn rank(&mut self, values: &[f64]) -> Vec<Vec<usize>> {
        let mut remaining: Vec<usize> = (0..values.len()).collect();
        let mut order: Vec<Vec<usize>> = Vec::new();
        while !remaining.is_empty() {
            let v: Vec<f64> = remaining.iter().map(|i| values[*i]).collect();
            let pick = remaining.remove(self.boltzmann(&v, self.beta()));
            match order.last_mut() {
                Some(group)
                    if self.cfg.deterministic
                        && (values[group[0]] - values[pick]).abs() <= TIE_TOLERANCE =>
                {
                    group.push(pick)
                }
                _ => order.push(vec![pick]),
            }
        }
        order
    }

    fn q_values(&self, cell: Cell) -> [f64; 4] {
        if self.spec.is_terminal(cell) || self.spec.is_wall(cell) {
            return [0.0; 4];
        }
        self.values.q_values[self.spec.cell_index(cell)]
    }

    fn start_of(&self, store: &EpisodeStore, target: &Target) -> Result<(EnvState, usize)> {
        let horizon = self.cfg.salience_window.max(1) * 2;
        match target {
            Target::StateAction { cell, .. } => Ok((
                EnvState {
                    agent_cell: *cell,
                    step_index: 0,
                    done: false,
                },
                horizon,
            )),
            Target::Segment {
                episode,
                start,
                end,
                ..
            } => {
                let ep = store.get(*episode)?;
                let t = ep.transitions.get(*start).ok_or_else(|| {
                    Error::Lookup(format!("segment start {start} of episode {episode}"))
                })?;
                Ok((
                    EnvState {
                        step_index: 0,
                        ..t.state
                    },
                    end - start,
                ))
            }
            Target::Episode { episode } => {
                let ep = store.get(*episode)?;
                let t = ep
                    .transitions
                    .first()
                    .ok_or_else(|| Error::Lookup(format!("episode {episode} is empty")))?;
                Ok((t.state, ep.len()))
            }
            _ => Err(Error::Usage("no start state for this target".into())),
        }
    }

    fn boltzmann_actions(
        &mut self,
        start: EnvState,
        horizon: usize,
        beta: f64,
    ) -> Result<Vec<Action>> {
        if horizon == 0 {
            return Err(Error::Usage("demonstration horizon must be >= 1".into()));
        }
        let mut state = start;
        let mut actions = Vec::with_capacity(horizon);
        while actions.len() < horizon && !state.done && !self.spec.is_terminal(state.agent_cell) {
            let q = self.q_values(state.agent_cell);
            let a = Action::ALL[self.boltzmann(&q, beta)];
            actions.push(a);
            state = step(&self.spec, state, a)?.next_state;
        }
        Ok(actions)
    }

    /// Demonstration from `state`: Boltzmann actions over the optimal action
    /// values with rationality `β · skill`, weighted by skill.
    pub fn demonstrate(&mut self, state: EnvState, horizon: usize) -> Result<Measurement> {
        let beta = self.beta() * self.cfg.skill;
        let beta = if beta.is_nan() { 0.0 } else { beta };
        let actions = self.boltzmann_actions(state, horizon, beta)?;
        let m = Measurement::new(vec![])
            .with(vars::START, Variable::Cells(vec![state.agent_cell]))
            .with(vars::ACTIONS, Variable::Actions(actions))
            .with(vars::WEIGHT, Variable::Scalar(self.cfg.skill));
        Ok(self.contextual(m))
    }

    /// Unprompted critiques of salient windows of an episode.
    ///
    /// A window is salient when the magnitude of its mean true reward is
    /// strictly above the configured quantile of the per-step magnitudes.
    /// Each salient window is critiqued with probability `availability`.
    pub fn proactive_emit(&mut self, episode: &Episode) -> Vec<Measurement> {
        let rewards: Vec<f64> = episode
            .transitions
            .iter()
            .map(|t| true_reward(&self.spec, &t.state, t.action))
            .collect();
        if rewards.is_empty() || self.cfg.availability == 0.0 {
            return Vec::new();
        }
        let threshold = quantile(
            &rewards.iter().map(|r| r.abs()).collect::<Vec<_>>(),
            self.cfg.salience_quantile,
        );
        let w = self.cfg.salience_window;
        let mut out = Vec::new();
        for start in (0..rewards.len()).step_by(w) {
            let end = (start + w).min(rewards.len());
            let mean = rewards[start..end].iter().sum::<f64>() / (end - start) as f64;
            if mean.abs() > threshold + SALIENCE_TOLERANCE
                && self.rng.random::<f64>() < self.cfg.availability
            {
                let option = if self.noisy(mean) >= 0.0 { 1.0 } else { -1.0 };
                let target =
                    Target::segment(episode.episode_id, start..end).expect("nonempty window");
                out.push(self.contextual(
                    Measurement::new(vec![target]).with(vars::OPTION, Variable::Scalar(option)),
                ));
            }
        }
        out
    }
}

/// Value gap below which an argmax annotator reports a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Keeps rounding in window means from making uniform episodes salient.
const SALIENCE_TOLERANCE: f64 = 1e-12;

/// Nearest-rank quantile of a sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}
