//! Target selection and query scheduling.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{ContextEncoding, FeedbackState, InteractionKind, Measurement, Target};
use crate::gridworld::EpisodeId;
use crate::reward::{population_std, sigmoid, Ensemble};
use crate::store::EpisodeStore;

pub const DEFAULT_SEGMENT_LEN: usize = 8;

/// A request for feedback on one or more targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u64,
    pub kind: InteractionKind,
    pub targets: Vec<Target>,
    /// Number of levels for a discrete rating slider; continuous when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    /// Selection score under the strategy that proposed it.
    #[serde(default)]
    pub score: f64,
}

impl Query {
    pub fn new(query_id: u64, kind: InteractionKind, targets: Vec<Target>) -> Self {
        Query {
            query_id,
            kind,
            targets,
            levels: None,
            score: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StrategyTag {
    #[default]
    UniformRandom,
    EnsembleDisagreement,
    InfoGainGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryStrategy {
    pub tag: StrategyTag,
    /// Candidate pairs scored per proposal.
    pub pool_size: usize,
    /// Queries returned per proposal.
    pub k: usize,
    pub segment_len: usize,
}

impl Default for QueryStrategy {
    fn default() -> Self {
        QueryStrategy {
            tag: StrategyTag::UniformRandom,
            pool_size: 500,
            k: 10,
            segment_len: DEFAULT_SEGMENT_LEN,
        }
    }
}

impl QueryStrategy {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.pool_size < self.k || self.segment_len == 0 {
            return Err(Error::Spec(format!(
                "query strategy needs pool size {} >= k {} >= 1 and a positive segment length",
                self.pool_size, self.k
            )));
        }
        Ok(())
    }
}

/// Non-overlapping segments of `len` steps covering an episode; the last one
/// is clipped at the episode end.
pub fn segments(store: &EpisodeStore, id: EpisodeId, len: usize) -> Result<Vec<Target>> {
    let n = store.get(id)?.len();
    (0..n)
        .step_by(len.max(1))
        .map(|s| Target::segment(id, s..(s + len).min(n)))
        .collect()
}

/// Unordered pair of targets in canonical order.
pub fn pair_key(a: &Target, b: &Target) -> (Target, Target) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Up to `strategy.k` segment-pair queries over the buffer.
///
/// Pairs in `exclude` are never proposed. When the number of candidate pairs
/// exceeds the pool size a seeded uniform sample forms the pool. Scored
/// strategies break ties by candidate order, which follows (episode id,
/// segment start). Returned queries have kind `PairwiseChoice` and ids
/// `0..k`.
pub fn propose_queries(
    store: &EpisodeStore,
    buffer: &[EpisodeId],
    ensemble: &Ensemble,
    strategy: &QueryStrategy,
    seed: u64,
    exclude: &BTreeSet<(Target, Target)>,
) -> Result<Vec<Query>> {
    strategy.validate()?;
    if buffer.is_empty() {
        return Err(Error::Usage("query proposal over an empty buffer".into()));
    }
    let mut ids = buffer.to_vec();
    ids.sort();
    ids.dedup();
    let mut segs = Vec::new();
    for id in ids {
        segs.extend(segments(store, id, strategy.segment_len)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = segs.len();
    let total = n * n.saturating_sub(1) / 2;
    let admissible = |i: usize, j: usize| !exclude.contains(&pair_key(&segs[i], &segs[j]));
    let mut pool: Vec<(usize, usize)> = if total <= strategy.pool_size {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| admissible(i, j))
            .collect()
    } else {
        let mut chosen = BTreeSet::new();
        let mut attempts = 0;
        while chosen.len() < strategy.pool_size && attempts < 20 * strategy.pool_size {
            attempts += 1;
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j && admissible(i.min(j), i.max(j)) {
                chosen.insert((i.min(j), i.max(j)));
            }
        }
        chosen.into_iter().collect()
    };
    let k = strategy.k.min(pool.len());
    let ctx = ContextEncoding::default();
    let scored: Vec<((usize, usize), f64)> = match strategy.tag {
        StrategyTag::UniformRandom => {
            pool.shuffle(&mut rng);
            pool.truncate(k);
            pool.into_iter().map(|p| (p, 0.0)).collect()
        }
        tag => {
            let preds: Vec<Vec<f64>> = segs
                .iter()
                .map(|s| ensemble.member_predictions(store, s, &ctx))
                .collect::<Result<_>>()?;
            let mut scored: Vec<_> = pool
                .into_iter()
                .map(|(i, j)| {
                    let score = match tag {
                        StrategyTag::EnsembleDisagreement => {
                            population_std(&preds[i]) + population_std(&preds[j])
                        }
                        _ => {
                            let p: Vec<f64> = preds[i]
                                .iter()
                                .zip(&preds[j])
                                .map(|(a, b)| sigmoid(a - b))
                                .collect();
                            population_std(&p).powi(2)
                        }
                    };
                    ((i, j), score)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));
            scored.truncate(k);
            scored
        }
    };
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(q, ((i, j), score))| Query {
            score,
            ..Query::new(
                q as u64,
                InteractionKind::PairwiseChoice,
                vec![segs[i].clone(), segs[j].clone()],
            )
        })
        .collect())
}

/// Conditions of the scheduling rule table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "when", rename_all = "snake_case")]
pub enum Condition {
    FatigueAbove { threshold: f64 },
    UncertainAndKnowledgeable { uncertainty: f64, knowledge: f64 },
    FeatureTarget,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(flatten)]
    pub condition: Condition,
    pub kind: InteractionKind,
}

/// First matching rule wins; `fallback` applies when none match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleRules {
    pub rules: Vec<Rule>,
    pub fallback: InteractionKind,
}

impl Default for ScheduleRules {
    fn default() -> Self {
        ScheduleRules {
            rules: vec![
                Rule {
                    condition: Condition::FatigueAbove { threshold: 0.7 },
                    kind: InteractionKind::PairwiseChoice,
                },
                Rule {
                    condition: Condition::UncertainAndKnowledgeable {
                        uncertainty: 0.5,
                        knowledge: 0.5,
                    },
                    kind: InteractionKind::Demonstration,
                },
                Rule {
                    condition: Condition::FeatureTarget,
                    kind: InteractionKind::FeatureBrush,
                },
            ],
            fallback: InteractionKind::RatingSlider,
        }
    }
}

impl ScheduleRules {
    /// Every query gets `kind`.
    pub fn fixed(kind: InteractionKind) -> Self {
        ScheduleRules {
            rules: Vec::new(),
            fallback: kind,
        }
    }
}

/// Interaction kind for a query under the current feedback state.
pub fn schedule_type(query: &Query, fs: &FeedbackState, rules: &ScheduleRules) -> InteractionKind {
    for rule in &rules.rules {
        let hit = match rule.condition {
            Condition::FatigueAbove { threshold } => fs.human.fatigue > threshold,
            Condition::UncertainAndKnowledgeable {
                uncertainty,
                knowledge,
            } => fs.agent.mean_uncertainty > uncertainty && fs.human.knowledge > knowledge,
            Condition::FeatureTarget => query
                .targets
                .iter()
                .any(|t| matches!(t, Target::FeatureSet { .. })),
            Condition::Always => true,
        };
        if hit {
            return rule.kind;
        }
    }
    rules.fallback
}

/// Entry of the feedback work queue.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkItem {
    /// Human-initiated feedback.
    Proactive(Measurement),
    /// System-initiated query.
    Reactive(Query),
}

impl WorkItem {
    pub fn is_proactive(&self) -> bool {
        matches!(self, WorkItem::Proactive(_))
    }
}

/// Proactive measurements first, then the reactive queries that do not
/// touch a proactively covered target.
pub fn merge_proactive(reactive: Vec<Query>, proactive: Vec<Measurement>) -> Vec<WorkItem> {
    let covered: BTreeSet<&Target> = proactive.iter().flat_map(|m| m.targets.iter()).collect();
    let kept: Vec<Query> = reactive
        .into_iter()
        .filter(|q| !q.targets.iter().any(|t| covered.contains(t)))
        .collect();
    proactive
        .into_iter()
        .map(WorkItem::Proactive)
        .chain(kept.into_iter().map(WorkItem::Reactive))
        .collect()
}
