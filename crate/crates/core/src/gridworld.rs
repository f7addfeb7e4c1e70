//! Deterministic, fully observed gridworld with a fixed linear featurization.
//!
//! The agent moves in four directions on a `width x height` grid. Moving into
//! a wall or off the grid leaves it in place but still consumes a step.
//! Entering a goal or lava cell, or exhausting `max_steps`, ends the episode.
//! Every state-action pair maps to an 8-dimensional feature vector, and the
//! hidden ground-truth reward is the dot product of that vector with
//! [`GridSpec::true_weights`].

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of reward features.
pub const FEATURE_DIM: usize = 8;

pub type FeatureVector = [f64; FEATURE_DIM];

/// Feature indices, in layout order.
pub mod feature {
    pub const BIAS: usize = 0;
    pub const GOAL_DX: usize = 1;
    pub const GOAL_DY: usize = 2;
    pub const AT_GOAL: usize = 3;
    pub const ON_LAVA: usize = 4;
    pub const ADJACENT_LAVA: usize = 5;
    pub const STEP: usize = 6;
    pub const BLOCKED: usize = 7;
}

pub const DEFAULT_WEIGHTS: FeatureVector = [0.0, 0.0, 0.0, 1.0, -1.0, 0.0, -0.01, -0.05];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    fn offset(self, action: Action) -> Cell {
        let (dx, dy) = action.delta();
        Cell::new(self.x + dx, self.y + dy)
    }

    fn manhattan(self, other: Cell) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub goal_cells: BTreeSet<Cell>,
    #[serde(default)]
    pub lava_cells: BTreeSet<Cell>,
    #[serde(default)]
    pub wall_cells: BTreeSet<Cell>,
    pub start_cell: Cell,
    pub max_steps: usize,
    #[serde(default = "default_weights")]
    pub true_weights: FeatureVector,
}

fn default_weights() -> FeatureVector {
    DEFAULT_WEIGHTS
}

impl Default for GridSpec {
    /// The 8x8 layout used by the CLI defaults and most tests.
    fn default() -> Self {
        let cells = |v: &[(i32, i32)]| v.iter().map(|&(x, y)| Cell::new(x, y)).collect();
        GridSpec {
            width: 8,
            height: 8,
            goal_cells: cells(&[(7, 7)]),
            lava_cells: cells(&[(3, 1), (3, 2), (5, 3), (5, 4), (2, 6), (2, 7)]),
            wall_cells: cells(&[(1, 4), (2, 4), (6, 6)]),
            start_cell: Cell::new(0, 0),
            max_steps: 40,
            true_weights: DEFAULT_WEIGHTS,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width < 2 || self.height < 2 {
            problems.push(format!(
                "grid must be at least 2x2, got {}x{}",
                self.width, self.height
            ));
        }
        if self.max_steps < 1 {
            problems.push("max_steps must be at least 1".to_string());
        }
        for (name, set) in [
            ("goal", &self.goal_cells),
            ("lava", &self.lava_cells),
            ("wall", &self.wall_cells),
        ] {
            if let Some(c) = set.iter().find(|c| !self.in_bounds(**c)) {
                problems.push(format!("{name} cell ({}, {}) outside grid", c.x, c.y));
            }
        }
        if !self.goal_cells.is_disjoint(&self.lava_cells)
            || !self.goal_cells.is_disjoint(&self.wall_cells)
            || !self.lava_cells.is_disjoint(&self.wall_cells)
        {
            problems.push("goal, lava and wall cells must be disjoint".to_string());
        }
        if !self.in_bounds(self.start_cell) {
            problems.push("start cell outside grid".to_string());
        }
        if self.wall_cells.contains(&self.start_cell) || self.lava_cells.contains(&self.start_cell)
        {
            problems.push("start cell must not be a wall or lava cell".to_string());
        }
        if self.true_weights.iter().any(|w| !w.is_finite()) {
            problems.push("true_weights must be finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(problems.join("; ")))
        }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.wall_cells.contains(&c)
    }

    pub fn is_terminal(&self, c: Cell) -> bool {
        self.goal_cells.contains(&c) || self.lava_cells.contains(&c)
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Cells the agent can act from: inside the grid, not a wall, not terminal.
    pub fn active_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count())
            .map(|i| self.cell_at(i))
            .filter(|c| !self.is_wall(*c) && !self.is_terminal(*c))
    }

    /// Every state-action pair the agent can take, in cell-major order.
    pub fn state_actions(&self) -> Vec<(Cell, Action)> {
        self.active_cells()
            .flat_map(|c| Action::ALL.into_iter().map(move |a| (c, a)))
            .collect()
    }

    /// Destination of `action` from `cell` and whether the move was blocked.
    pub fn next_cell(&self, cell: Cell, action: Action) -> (Cell, bool) {
        let target = cell.offset(action);
        if !self.in_bounds(target) || self.is_wall(target) {
            (cell, true)
        } else {
            (target, false)
        }
    }

    fn nearest_goal(&self, c: Cell) -> Option<Cell> {
        // BTreeSet iteration order makes ties resolve to the smallest cell.
        self.goal_cells
            .iter()
            .copied()
            .min_by_key(|g| g.manhattan(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_cell: Cell,
    pub step_index: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub action: Action,
    pub next_state: EnvState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeId(pub u64);

impl std::fmt::Display for EpisodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOrigin {
    /// Generated by running the agent's policy.
    #[default]
    Rollout,
    /// Authored by an annotator (demonstration or correction); not sampled
    /// from the agent.
    HumanAuthored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: EpisodeId,
    pub transitions: Vec<Transition>,
    pub seed: u64,
    #[serde(default)]
    pub origin: EpisodeOrigin,
    /// Policy snapshot that produced this episode.
    #[serde(default)]
    pub snapshot: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// True when every transition hands off to the next one.
    pub fn is_contiguous(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }
}

pub fn reset(spec: &GridSpec, _seed: u64) -> Result<EnvState> {
    spec.validate()?;
    Ok(EnvState {
        agent_cell: spec.start_cell,
        step_index: 0,
        done: false,
    })
}

pub fn step(spec: &GridSpec, state: EnvState, action: Action) -> Result<Transition> {
    if state.done {
        return Err(Error::Usage("step called on a terminated state".into()));
    }
    let (cell, _) = spec.next_cell(state.agent_cell, action);
    let step_index = state.step_index + 1;
    let next_state = EnvState {
        agent_cell: cell,
        step_index,
        done: spec.is_terminal(cell) || step_index >= spec.max_steps,
    };
    Ok(Transition {
        state,
        action,
        next_state,
    })
}

/// Features of the transition induced by taking `action` in `cell`.
pub fn cell_features(spec: &GridSpec, cell: Cell, action: Action) -> FeatureVector {
    use feature::*;
    let (next, blocked) = spec.next_cell(cell, action);
    let mut f = [0.0; FEATURE_DIM];
    f[BIAS] = 1.0;
    if let Some(goal) = spec.nearest_goal(next) {
        f[GOAL_DX] = (goal.x - next.x).abs() as f64 / spec.width as f64;
        f[GOAL_DY] = (goal.y - next.y).abs() as f64 / spec.height as f64;
    }
    f[AT_GOAL] = indicator(spec.goal_cells.contains(&next));
    f[ON_LAVA] = indicator(spec.lava_cells.contains(&next));
    f[ADJACENT_LAVA] = indicator(
        Action::ALL
            .iter()
            .any(|a| spec.lava_cells.contains(&next.offset(*a))),
    );
    f[STEP] = 1.0;
    f[BLOCKED] = indicator(blocked);
    f
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn featurize(spec: &GridSpec, state: &EnvState, action: Action) -> FeatureVector {
    cell_features(spec, state.agent_cell, action)
}

pub fn dot(a: &FeatureVector, b: &FeatureVector) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn true_reward(spec: &GridSpec, state: &EnvState, action: Action) -> f64 {
    true_cell_reward(spec, state.agent_cell, action)
}

pub fn true_cell_reward(spec: &GridSpec, cell: Cell, action: Action) -> f64 {
    dot(&spec.true_weights, &cell_features(spec, cell, action))
}

/// Undiscounted sum of the hidden reward along an episode.
pub fn episode_return(spec: &GridSpec, episode: &Episode) -> f64 {
    episode
        .transitions
        .iter()
        .map(|t| true_reward(spec, &t.state, t.action))
        .sum()
}

/// One action per cell, indexed by [`GridSpec::cell_index`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTable {
    pub width: usize,
    pub height: usize,
    pub actions: Vec<Action>,
}

impl ActionTable {
    pub fn constant(spec: &GridSpec, action: Action) -> Self {
        ActionTable {
            width: spec.width,
            height: spec.height,
            actions: vec![action; spec.cell_count()],
        }
    }

    pub fn get(&self, c: Cell) -> Action {
        self.actions[c.y as usize * self.width + c.x as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Uniform,
    Greedy { table: ActionTable },
    EpsilonGreedy { table: ActionTable, epsilon: f64 },
}

impl Policy {
    pub fn sample(&self, cell: Cell, rng: &mut impl Rng) -> Action {
        match self {
            Policy::Uniform => Action::ALL[rng.random_range(0..4)],
            Policy::Greedy { table } => table.get(cell),
            Policy::EpsilonGreedy { table, epsilon } => {
                if rng.random::<f64>() < *epsilon {
                    Action::ALL[rng.random_range(0..4)]
                } else {
                    table.get(cell)
                }
            }
        }
    }

    /// Action probabilities at `cell`, in [`Action::ALL`] order.
    pub fn probabilities(&self, cell: Cell) -> [f64; 4] {
        match self {
            Policy::Uniform => [0.25; 4],
            Policy::Greedy { table } => {
                let mut p = [0.0; 4];
                p[table.get(cell).index()] = 1.0;
                p
            }
            Policy::EpsilonGreedy { table, epsilon } => {
                let mut p = [epsilon / 4.0; 4];
                p[table.get(cell).index()] += 1.0 - epsilon;
                p
            }
        }
    }
}

/// Runs `policy` from the start cell until termination or `max_steps`
/// (whichever of the argument and the spec's limit is smaller).
pub fn rollout(
    spec: &GridSpec,
    policy: &Policy,
    id: EpisodeId,
    seed: u64,
    max_steps: usize,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = reset(spec, seed)?;
    let limit = max_steps.min(spec.max_steps);
    let mut transitions = Vec::new();
    while !state.done && transitions.len() < limit {
        let action = policy.sample(state.agent_cell, &mut rng);
        let t = step(spec, state, action)?;
        state = t.next_state;
        transitions.push(t);
    }
    Ok(Episode {
        episode_id: id,
        transitions,
        seed,
        origin: EpisodeOrigin::Rollout,
        snapshot: 0,
    })
}

/// Replays a fixed action list from `start`, stopping early at termination.
pub fn replay_actions(
    spec: &GridSpec,
    start: EnvState,
    actions: &[Action],
    id: EpisodeId,
) -> Result<Episode> {
    let mut state = start;
    let mut transitions = Vec::with_capacity(actions.len());
    for &action in actions {
        if state.done {
            break;
        }
        let t = step(spec, state, action)?;
        state = t.next_state;
        transitions.push(t);
    }
    Ok(Episode {
        episode_id: id,
        transitions,
        seed: 0,
        origin: EpisodeOrigin::HumanAuthored,
        snapshot: 0,
    })
}

/// State values, action values and a greedy policy for a reward function.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    /// Per cell; zero for walls and terminal cells.
    pub values: Vec<f64>,
    pub q_values: Vec<[f64; 4]>,
    pub policy: ActionTable,
    pub iterations: usize,
}

impl ValueTable {
    pub fn value(&self, spec: &GridSpec, c: Cell) -> f64 {
        self.values[spec.cell_index(c)]
    }
}

pub const VALUE_TOLERANCE: f64 = 1e-9;

/// Infinite-horizon discounted value iteration; terminal cells absorb with
/// value zero. Greedy ties go to the earliest action in [`Action::ALL`].
pub fn optimal_values(
    spec: &GridSpec,
    reward_fn: impl Fn(Cell, Action) -> f64,
    gamma: f64,
) -> Result<ValueTable> {
    check_gamma(gamma)?;
    spec.validate()?;
    let cells: Vec<Cell> = spec.active_cells().collect();
    let rewards: Vec<[f64; 4]> = cells
        .iter()
        .map(|&c| Action::ALL.map(|a| reward_fn(c, a)))
        .collect();
    let mut values = vec![0.0; spec.cell_count()];
    let mut q_values = vec![[0.0; 4]; spec.cell_count()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut delta: f64 = 0.0;
        for (c, r) in cells.iter().zip(&rewards) {
            let q = backup(spec, &values, *c, r, gamma);
            let v = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let i = spec.cell_index(*c);
            delta = delta.max((v - values[i]).abs());
            values[i] = v;
            q_values[i] = q;
        }
        if delta < VALUE_TOLERANCE {
            break;
        }
    }
    let mut policy = ActionTable::constant(spec, Action::Up);
    for c in &cells {
        let i = spec.cell_index(*c);
        policy.actions[i] = Action::ALL[argmax(&q_values[i])];
    }
    Ok(ValueTable {
        values,
        q_values,
        policy,
        iterations,
    })
}

/// Exact (to [`VALUE_TOLERANCE`]) evaluation of a possibly stochastic policy.
pub fn evaluate_policy(
    spec: &GridSpec,
    policy: &Policy,
    reward_fn: impl Fn(Cell, Action) -> f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let cells: Vec<Cell> = spec.active_cells().collect();
    let rewards: Vec<[f64; 4]> = cells
        .iter()
        .map(|&c| Action::ALL.map(|a| reward_fn(c, a)))
        .collect();
    let mut values = vec![0.0; spec.cell_count()];
    loop {
        let mut delta: f64 = 0.0;
        for (c, r) in cells.iter().zip(&rewards) {
            let q = backup(spec, &values, *c, r, gamma);
            let p = policy.probabilities(*c);
            let v: f64 = q.iter().zip(p).map(|(q, p)| q * p).sum();
            let i = spec.cell_index(*c);
            delta = delta.max((v - values[i]).abs());
            values[i] = v;
        }
        if delta < VALUE_TOLERANCE {
            return Ok(values);
        }
    }
}

fn backup(spec: &GridSpec, values: &[f64], cell: Cell, rewards: &[f64; 4], gamma: f64) -> [f64; 4] {
    Action::ALL.map(|a| {
        let (next, _) = spec.next_cell(cell, a);
        let future = if spec.is_terminal(next) {
            0.0
        } else {
            values[spec.cell_index(next)]
        };
        rewards[a.index()] + gamma * future
    })
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Spec(format!(
            "discount must lie in (0, 1), got {gamma}"
        )))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Discounted return of an episode under `reward_fn`.
pub fn discounted_return(
    episode: &Episode,
    reward_fn: impl Fn(Cell, Action) -> f64,
    gamma: f64,
) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for t in &episode.transitions {
        total += discount * reward_fn(t.state.agent_cell, t.action);
        discount *= gamma;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn open_grid(w: usize, h: usize, goal: (i32, i32)) -> GridSpec {
        GridSpec {
            width: w,
            height: h,
            goal_cells: [Cell::new(goal.0, goal.1)].into(),
            lava_cells: BTreeSet::new(),
            wall_cells: BTreeSet::new(),
            start_cell: Cell::new(0, 0),
            max_steps: 50,
            true_weights: DEFAULT_WEIGHTS,
        }
    }

    /// A 4x2 grid whose bottom row is walled off: a 1x4 corridor.
    pub(crate) fn corridor() -> GridSpec {
        let mut spec = open_grid(4, 2, (3, 0));
        spec.wall_cells = (0..4).map(|x| Cell::new(x, 1)).collect();
        spec
    }

    fn goal_only(spec: &GridSpec) -> impl Fn(Cell, Action) -> f64 + '_ {
        move |c, a| indicator(spec.goal_cells.contains(&spec.next_cell(c, a).0))
    }

    #[test]
    fn reset_places_agent_at_start() {
        let spec = GridSpec::default();
        let s = reset(&spec, 0).unwrap();
        assert_eq!(s.agent_cell, spec.start_cell);
        assert_eq!(s.step_index, 0);
        assert!(!s.done);
        assert_eq!(s, reset(&spec, 0).unwrap());
    }

    #[test]
    fn reset_rejects_start_on_wall() {
        let mut spec = GridSpec::default();
        spec.wall_cells.insert(spec.start_cell);
        assert!(matches!(reset(&spec, 0), Err(Error::Spec(_))));
    }

    #[test]
    fn blocked_move_consumes_a_step() {
        let spec = GridSpec::default();
        let s = reset(&spec, 0).unwrap();
        let t = step(&spec, s, Action::Up).unwrap();
        assert_eq!(t.next_state.agent_cell, s.agent_cell);
        assert_eq!(t.next_state.step_index, 1);
        assert!(!t.next_state.done);
    }

    #[test]
    fn entering_goal_terminates_and_stepping_after_fails() {
        let spec = open_grid(3, 3, (1, 0));
        let s = reset(&spec, 0).unwrap();
        let t = step(&spec, s, Action::Right).unwrap();
        assert!(t.next_state.done);
        assert!(matches!(
            step(&spec, t.next_state, Action::Left),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn features_of_goal_lava_and_blocked_transitions() {
        let spec = GridSpec::default();
        let goal = cell_features(&spec, Cell::new(7, 6), Action::Down);
        assert_eq!(goal[feature::AT_GOAL], 1.0);
        assert_eq!(goal[feature::BIAS], 1.0);
        // (4, 2) is next to lava at (3, 2) and is free.
        let near = cell_features(&spec, Cell::new(4, 1), Action::Down);
        assert_eq!(near[feature::ADJACENT_LAVA], 1.0);
        assert_eq!(near[feature::ON_LAVA], 0.0);
        let blocked = cell_features(&spec, Cell::new(0, 0), Action::Left);
        assert_eq!(blocked[feature::BLOCKED], 1.0);
        assert_eq!(blocked, cell_features(&spec, Cell::new(0, 0), Action::Left));
    }

    #[test]
    fn true_reward_examples() {
        let spec = GridSpec::default();
        let at = |c: (i32, i32)| EnvState {
            agent_cell: Cell::new(c.0, c.1),
            step_index: 0,
            done: false,
        };
        assert_abs_diff_eq!(
            true_reward(&spec, &at((7, 6)), Action::Down),
            0.99,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            true_reward(&spec, &at((3, 0)), Action::Down),
            -1.01,
            epsilon = 1e-12
        );
        // (0, 0) moving up is blocked; no lava next to (0, 0).
        assert_abs_diff_eq!(
            true_reward(&spec, &at((0, 0)), Action::Up),
            -0.06,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rollout_examples() {
        let spec = open_grid(3, 3, (1, 0));
        let vt = optimal_values(&spec, |c, a| true_cell_reward(&spec, c, a), 0.9).unwrap();
        let optimal = Policy::Greedy { table: vt.policy };
        let ep = rollout(&spec, &optimal, EpisodeId(0), 0, 50).unwrap();
        assert_eq!(ep.len(), 1);
        assert!(ep.transitions[0].next_state.done);

        let a = rollout(&spec, &Policy::Uniform, EpisodeId(1), 7, 50).unwrap();
        let b = rollout(&spec, &Policy::Uniform, EpisodeId(1), 7, 50).unwrap();
        assert_eq!(a, b);
        assert!(a.is_contiguous());

        let mut limited = open_grid(3, 3, (2, 2));
        limited.max_steps = 6;
        let stuck = Policy::Greedy {
            table: ActionTable::constant(&limited, Action::Up),
        };
        let ep = rollout(&limited, &stuck, EpisodeId(2), 0, 100).unwrap();
        assert_eq!(ep.len(), 6);
        assert!(ep.transitions.last().unwrap().next_state.done);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let spec = GridSpec::default();
        let vt = optimal_values(&spec, |_, _| 0.0, 0.9).unwrap();
        assert!(vt.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corridor_value_three_moves_from_goal() {
        let spec = corridor();
        let vt = optimal_values(&spec, goal_only(&spec), 0.9).unwrap();
        assert_abs_diff_eq!(vt.value(&spec, Cell::new(0, 0)), 0.81, epsilon = 1e-9);
        assert_abs_diff_eq!(vt.value(&spec, Cell::new(1, 0)), 0.9, epsilon = 1e-9);
        assert_abs_diff_eq!(vt.value(&spec, Cell::new(2, 0)), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn greedy_rollout_return_matches_start_value() {
        let spec = GridSpec::default();
        let gamma = 0.95;
        let reward = |c, a| true_cell_reward(&spec, c, a);
        let vt = optimal_values(&spec, reward, gamma).unwrap();
        let ep = rollout(
            &spec,
            &Policy::Greedy {
                table: vt.policy.clone(),
            },
            EpisodeId(0),
            0,
            spec.max_steps,
        )
        .unwrap();
        assert!(ep.transitions.last().unwrap().next_state.done);
        assert_abs_diff_eq!(
            discounted_return(&ep, reward, gamma),
            vt.value(&spec, spec.start_cell),
            epsilon = 1e-8
        );
    }

    #[test]
    fn greedy_policy_admits_no_improving_deviation() {
        let spec = GridSpec::default();
        let gamma = 0.9;
        let reward = |c, a| true_cell_reward(&spec, c, a);
        let vt = optimal_values(&spec, reward, gamma).unwrap();
        for c in spec.active_cells() {
            let chosen = vt.policy.get(c);
            let q = vt.q_values[spec.cell_index(c)];
            for a in Action::ALL {
                assert!(q[a.index()] <= q[chosen.index()] + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_discount() {
        let spec = GridSpec::default();
        assert!(optimal_values(&spec, |_, _| 0.0, 1.0).is_err());
        assert!(optimal_values(&spec, |_, _| 0.0, 0.0).is_err());
    }

    #[test]
    fn episode_return_sums_true_reward() {
        let spec = GridSpec::default();
        let ep = rollout(&spec, &Policy::Uniform, EpisodeId(0), 3, 40).unwrap();
        let manual: f64 = ep
            .transitions
            .iter()
            .map(|t| dot(&spec.true_weights, &featurize(&spec, &t.state, t.action)))
            .sum();
        assert_eq!(episode_return(&spec, &ep), manual);
    }
}
