//! Episode buffer and target resolution.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::feedback::{vars, InteractionKind, Measurement, Target, Variable};
use crate::gridworld::{
    cell_features, featurize, replay_actions, EnvState, Episode, EpisodeId, EpisodeOrigin,
    FeatureVector, GridSpec, FEATURE_DIM,
};

/// Every episode a session has seen, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct EpisodeStore {
    pub spec: GridSpec,
    episodes: BTreeMap<EpisodeId, Episode>,
}

impl EpisodeStore {
    pub fn new(spec: GridSpec) -> Self {
        EpisodeStore {
            spec,
            episodes: BTreeMap::new(),
        }
    }

    /// Adds an episode. Re-inserting an identical episode is a no-op; a
    /// different episode under a known id is an integrity error.
    pub fn insert(&mut self, episode: Episode) -> Result<()> {
        match self.episodes.get(&episode.episode_id) {
            Some(existing) if *existing == episode => Ok(()),
            Some(_) => Err(Error::Integrity(format!(
                "episode {} already stored with different content",
                episode.episode_id
            ))),
            None => {
                self.episodes.insert(episode.episode_id, episode);
                Ok(())
            }
        }
    }

    pub fn get(&self, id: EpisodeId) -> Result<&Episode> {
        self.episodes
            .get(&id)
            .ok_or_else(|| Error::Lookup(format!("episode {id}")))
    }

    pub fn contains(&self, id: EpisodeId) -> bool {
        self.episodes.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.values()
    }

    /// Agent-generated episodes in id order.
    pub fn rollouts(&self) -> impl Iterator<Item = &Episode> {
        self.episodes
            .values()
            .filter(|e| e.origin == EpisodeOrigin::Rollout)
    }

    /// Smallest id not yet in use.
    pub fn next_id(&self) -> EpisodeId {
        EpisodeId(self.episodes.keys().next_back().map_or(0, |k| k.0 + 1))
    }

    /// Feature rows a target aggregates over.
    ///
    /// A feature-set target resolves to a single indicator row.
    pub fn resolve(&self, target: &Target) -> Result<Vec<FeatureVector>> {
        target.validate()?;
        let rows = match target {
            Target::StateAction { cell, action, .. } => {
                if !self.spec.in_bounds(*cell) || self.spec.is_wall(*cell) {
                    return Err(Error::Lookup(format!(
                        "cell ({},{}) is not a state",
                        cell.x, cell.y
                    )));
                }
                vec![cell_features(&self.spec, *cell, *action)]
            }
            Target::Segment {
                episode,
                start,
                end,
                ..
            } => {
                let ep = self.get(*episode)?;
                if *end > ep.len() {
                    return Err(Error::Lookup(format!(
                        "segment {start}..{end} of episode {episode} with {} steps",
                        ep.len()
                    )));
                }
                self.rows(&ep.transitions[*start..*end])
            }
            Target::Episode { episode } => self.rows(&self.get(*episode)?.transitions),
            Target::FeatureSet { features, .. } => {
                let mut row = [0.0; FEATURE_DIM];
                for &i in features {
                    row[i] = 1.0;
                }
                vec![row]
            }
            Target::WholeBehavior { snapshot } => {
                let rows: Vec<_> = self
                    .rollouts()
                    .filter(|e| e.snapshot == *snapshot)
                    .flat_map(|e| self.rows(&e.transitions))
                    .collect();
                if rows.is_empty() {
                    return Err(Error::Lookup(format!("behavior snapshot {snapshot}")));
                }
                rows
            }
        };
        if rows.is_empty() {
            return Err(Error::Lookup("target covers no transitions".into()));
        }
        Ok(rows)
    }

    fn rows(&self, transitions: &[crate::gridworld::Transition]) -> Vec<FeatureVector> {
        transitions
            .iter()
            .map(|t| featurize(&self.spec, &t.state, t.action))
            .collect()
    }

    /// Turns authored action lists into stored episodes.
    ///
    /// Demonstrations and segment corrections may arrive as a start cell plus
    /// an action list instead of a target. The actions are replayed from the
    /// start cell into a new human-authored episode, whose full span becomes
    /// the demonstrated (or corrected) segment. Other measurements pass
    /// through unchanged.
    pub fn materialize(&mut self, kind: InteractionKind, m: &Measurement) -> Result<Measurement> {
        let expected = match kind {
            InteractionKind::Demonstration => 0,
            InteractionKind::SegmentCorrection => 1,
            _ => return Ok(m.clone()),
        };
        if m.targets.len() != expected || !m.intrinsic.contains_key(vars::ACTIONS) {
            return Ok(m.clone());
        }
        let actions = match m.get(vars::ACTIONS)? {
            Variable::Actions(a) => a.clone(),
            _ => return Err(Error::missing(vars::ACTIONS)),
        };
        let start = match m.get(vars::START)? {
            Variable::Cells(c) if c.len() == 1 => c[0],
            _ => return Err(Error::missing(vars::START)),
        };
        if !self.spec.in_bounds(start) || self.spec.is_wall(start) {
            return Err(Error::missing(vars::START));
        }
        let state = EnvState {
            agent_cell: start,
            step_index: 0,
            done: self.spec.is_terminal(start),
        };
        let id = self.next_id();
        let episode = replay_actions(&self.spec, state, &actions, id)?;
        if episode.is_empty() {
            return Err(Error::missing(vars::ACTIONS));
        }
        let span = Target::segment(id, 0..episode.len())?.into_hypothetical();
        self.insert(episode)?;
        let mut out = m.clone();
        out.targets.push(span);
        Ok(out)
    }

    /// Rows of every rollout transition; the reference level for
    /// instruction losses.
    pub fn baseline_rows(&self) -> Vec<FeatureVector> {
        self.rollouts()
            .flat_map(|e| self.rows(&e.transitions))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{rollout, Action, Cell, Policy};

    fn store_with_episode() -> EpisodeStore {
        let spec = GridSpec::default();
        let table = crate::gridworld::ActionTable::constant(&spec, Action::Right);
        let ep = rollout(&spec, &Policy::Greedy { table }, EpisodeId(0), 1, 40).unwrap();
        let mut store = EpisodeStore::new(spec);
        store.insert(ep).unwrap();
        store
    }

    #[test]
    fn resolves_segments_and_state_actions() {
        let store = store_with_episode();
        let seg = Target::segment(EpisodeId(0), 1..3).unwrap();
        assert_eq!(store.resolve(&seg).unwrap().len(), 2);
        let sa = Target::state_action(Cell::new(0, 0), Action::Right);
        assert_eq!(store.resolve(&sa).unwrap()[0][0], 1.0);
        assert!(matches!(
            store.resolve(&Target::episode(EpisodeId(9))),
            Err(Error::Lookup(_))
        ));
        let past_end = Target::segment(EpisodeId(0), 0..99).unwrap();
        assert!(store.resolve(&past_end).is_err());
    }

    #[test]
    fn demonstration_becomes_episode() {
        let mut store = store_with_episode();
        let m = Measurement::new(vec![])
            .with(vars::START, Variable::Cells(vec![Cell::new(0, 0)]))
            .with(
                vars::ACTIONS,
                Variable::Actions(vec![Action::Down, Action::Down]),
            );
        let out = store
            .materialize(InteractionKind::Demonstration, &m)
            .unwrap();
        assert_eq!(
            out.targets,
            vec![Target::segment(EpisodeId(1), 0..2)
                .unwrap()
                .into_hypothetical()]
        );
        let ep = store.get(EpisodeId(1)).unwrap();
        assert_eq!(ep.origin, EpisodeOrigin::HumanAuthored);
        assert_eq!(ep.transitions[1].next_state.agent_cell, Cell::new(0, 2));
        let untouched = store
            .materialize(InteractionKind::CritiqueButton, &m)
            .unwrap();
        assert_eq!(untouched, m);
    }

    #[test]
    fn conflicting_insert_rejected() {
        let mut store = store_with_episode();
        let mut ep = store.get(EpisodeId(0)).unwrap().clone();
        assert!(store.insert(ep.clone()).is_ok());
        ep.seed = 77;
        assert!(matches!(store.insert(ep), Err(Error::Integrity(_))));
        assert_eq!(store.next_id(), EpisodeId(1));
    }
}
