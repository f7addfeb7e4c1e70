//! Typed feedback: raw measurements, the state they were taken in, the
//! targets they refer to, and validated feedback instances.

pub mod codec;
pub mod dimensions;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Cell, EpisodeId, FEATURE_DIM};

pub use dimensions::{
    classify, classify_id, ChoiceSet, DimensionProfile, FeedbackType, TargetRelation,
};

/// A subset of behavior that a feedback value is assigned to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    StateAction {
        cell: Cell,
        action: Action,
        #[serde(default)]
        hypothetical: bool,
    },
    /// Transitions `start..end` of an episode.
    Segment {
        episode: EpisodeId,
        start: usize,
        end: usize,
        #[serde(default)]
        hypothetical: bool,
    },
    Episode {
        episode: EpisodeId,
    },
    FeatureSet {
        features: BTreeSet<usize>,
        #[serde(default)]
        mask: Option<BTreeSet<Cell>>,
    },
    /// All buffered transitions produced by one policy snapshot.
    WholeBehavior {
        snapshot: u64,
    },
}

impl Target {
    pub fn state_action(cell: Cell, action: Action) -> Target {
        Target::StateAction {
            cell,
            action,
            hypothetical: false,
        }
    }

    pub fn segment(episode: EpisodeId, range: std::ops::Range<usize>) -> Result<Target> {
        let t = Target::Segment {
            episode,
            start: range.start,
            end: range.end,
            hypothetical: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn episode(episode: EpisodeId) -> Target {
        Target::Episode { episode }
    }

    pub fn features(indices: impl IntoIterator<Item = usize>) -> Result<Target> {
        let t = Target::FeatureSet {
            features: indices.into_iter().collect(),
            mask: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn whole_behavior(snapshot: u64) -> Target {
        Target::WholeBehavior { snapshot }
    }

    /// Marks a state-action or segment target as human-authored.
    pub fn into_hypothetical(self) -> Target {
        match self {
            Target::StateAction { cell, action, .. } => Target::StateAction {
                cell,
                action,
                hypothetical: true,
            },
            Target::Segment {
                episode,
                start,
                end,
                ..
            } => Target::Segment {
                episode,
                start,
                end,
                hypothetical: true,
            },
            other => other,
        }
    }

    /// Checks the payload on its own; whether a segment fits its episode is
    /// decided when the target is resolved.
    pub fn validate(&self) -> Result<()> {
        match self {
            Target::Segment { start, end, .. } if start >= end => Err(Error::validation(format!(
                "segment range [{start}, {end}) is empty"
            ))),
            Target::FeatureSet { features, .. } if features.is_empty() => {
                Err(Error::validation("feature set is empty"))
            }
            Target::FeatureSet { features, .. } => {
                match features.iter().find(|i| **i >= FEATURE_DIM) {
                    Some(i) => Err(Error::validation(format!(
                        "feature index {i} outside [0, {FEATURE_DIM})"
                    ))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn granularity(&self) -> dimensions::TemporalGranularity {
        use dimensions::TemporalGranularity as G;
        match self {
            Target::StateAction { .. } | Target::FeatureSet { .. } => G::Step,
            Target::Segment { .. } => G::Segment,
            Target::Episode { .. } => G::Episode,
            Target::WholeBehavior { .. } => G::EntireBehavior,
        }
    }

    pub fn episode_id(&self) -> Option<EpisodeId> {
        match self {
            Target::Segment { episode, .. } | Target::Episode { episode } => Some(*episode),
            _ => None,
        }
    }

    pub fn is_hypothetical(&self) -> bool {
        matches!(
            self,
            Target::StateAction {
                hypothetical: true,
                ..
            } | Target::Segment {
                hypothetical: true,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn from_sign(v: f64) -> Option<Polarity> {
        if v > 0.0 {
            Some(Polarity::Positive)
        } else if v < 0.0 {
            Some(Polarity::Negative)
        } else {
            None
        }
    }
}

/// Tie groups over target indices, best group first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking(pub Vec<Vec<usize>>);

impl Ranking {
    /// `better` strictly preferred to `worse`.
    pub fn prefer(better: usize, worse: usize) -> Ranking {
        Ranking(vec![vec![better], vec![worse]])
    }

    pub fn tie(a: usize, b: usize) -> Ranking {
        Ranking(vec![vec![a, b]])
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(better, worse)` for every pair in different groups.
    pub fn strict_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (gi, group) in self.0.iter().enumerate() {
            for lower in &self.0[gi + 1..] {
                for &a in group {
                    for &b in lower {
                        out.push((a, b));
                    }
                }
            }
        }
        out
    }

    /// Unordered pairs sharing a group.
    pub fn tie_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for group in &self.0 {
            for i in 0..group.len() {
                for j in i + 1..group.len() {
                    out.push((group[i], group[j]));
                }
            }
        }
        out
    }

    /// Problems with this ranking as an ordering of `n` targets.
    fn violations(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.0.iter().any(Vec::is_empty) {
            out.push("relation contains an empty tie group".to_string());
        }
        let mut seen = BTreeSet::new();
        for &i in self.0.iter().flatten() {
            if i >= n {
                out.push(format!("relation refers to target {i} of {n}"));
            } else if !seen.insert(i) {
                out.push(format!("relation lists target {i} twice"));
            }
        }
        if seen.len() != n && out.is_empty() {
            out.push("relation must order every target exactly once".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackValue {
    Binary(Polarity),
    /// Level `level` on a scale `1..=levels`.
    Discrete {
        level: u32,
        levels: u32,
    },
    Continuous(f64),
    Relation(Ranking),
    /// Optimality weight of an instructive target.
    Instruction(f64),
}

impl FeedbackValue {
    /// Absolute values mapped onto [-1, 1]; `None` for relations and instructions.
    pub fn numeric(&self) -> Option<f64> {
        match self {
            FeedbackValue::Binary(p) => Some(p.sign()),
            FeedbackValue::Discrete { level, levels } => Some(rescale_level(*level, *levels)),
            FeedbackValue::Continuous(v) => Some(*v),
            FeedbackValue::Relation(_) | FeedbackValue::Instruction(_) => None,
        }
    }

    pub fn is_relation(&self) -> bool {
        matches!(self, FeedbackValue::Relation(_))
    }

    /// Choice-set sizes this value can be read as.
    fn compatible_choice_sets(&self) -> &'static [ChoiceSet] {
        match self {
            FeedbackValue::Binary(_) => &[ChoiceSet::Binary],
            FeedbackValue::Discrete { .. } => &[ChoiceSet::Discrete],
            FeedbackValue::Continuous(_) => &[ChoiceSet::Continuous],
            FeedbackValue::Relation(_) => &[ChoiceSet::Binary, ChoiceSet::Discrete],
            FeedbackValue::Instruction(_) => &[ChoiceSet::Binary, ChoiceSet::Continuous],
        }
    }
}

/// Maps level `1..=levels` linearly onto [-1, 1].
pub fn rescale_level(level: u32, levels: u32) -> f64 {
    2.0 * (level as f64 - 1.0) / (levels as f64 - 1.0) - 1.0
}

/// Fixed-length encoding of the contextual measurement variables.
///
/// Layout: normalized response time, normalized session time,
/// self-confidence, skill answer, distinguishability answer, annotator bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextEncoding(pub [f64; CONTEXT_DIM]);

pub const CONTEXT_DIM: usize = 6;

impl ContextEncoding {
    pub const RESPONSE_TIME: usize = 0;
    pub const SESSION_TIME: usize = 1;
    pub const CONFIDENCE: usize = 2;
    pub const SKILL: usize = 3;
    pub const DISTINGUISHABILITY: usize = 4;
    pub const ANNOTATOR: usize = 5;

    pub fn confidence(&self) -> f64 {
        self.0[Self::CONFIDENCE]
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.0[Self::CONFIDENCE] = c;
        self
    }
}

impl Default for ContextEncoding {
    fn default() -> Self {
        ContextEncoding([0.0, 0.0, 0.5, 0.0, 0.0, 0.0])
    }
}

/// Names of measurement variables shared by producers and translators.
pub mod vars {
    pub const OPTION: &str = "option";
    pub const VALUE: &str = "value";
    pub const LEVEL: &str = "level";
    pub const LEVELS: &str = "levels";
    pub const CHOICE: &str = "choice";
    pub const ORDER: &str = "order";
    pub const ADVISED_ACTION: &str = "advised_action";
    pub const ACTIONS: &str = "actions";
    pub const START: &str = "start";
    pub const WEIGHT: &str = "weight";
    pub const FEATURES: &str = "features";
    pub const VALENCE: &str = "valence";
    pub const CELLS: &str = "cells";
    pub const TOKENS: &str = "tokens";
    pub const SAMPLES: &str = "samples";

    pub const RESPONSE_TIME_MS: &str = "response_time_ms";
    pub const SESSION_ELAPSED_S: &str = "session_elapsed_s";
    pub const ANNOTATOR_ID: &str = "annotator_id";
    pub const SELF_CONFIDENCE: &str = "self_confidence";
    pub const SKILL_ANSWER: &str = "skill_answer";
    pub const DISTINGUISHABILITY_ANSWER: &str = "distinguishability_answer";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Scalar(f64),
    Index(i64),
    Text(String),
    /// Tie groups of option indices, best first.
    Order(Vec<Vec<usize>>),
    Indices(Vec<usize>),
    Cells(Vec<Cell>),
    Actions(Vec<Action>),
    Tokens(Vec<String>),
    Signal(Vec<f64>),
}

impl Variable {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Variable::Scalar(v) => Some(*v),
            Variable::Index(i) => Some(*i as f64),
            _ => None,
        }
    }
}

/// One raw interaction record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    #[serde(default)]
    pub query_id: Option<u64>,
    /// The options shown, or the subject of the feedback.
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub intrinsic: BTreeMap<String, Variable>,
    #[serde(default)]
    pub contextual: BTreeMap<String, Variable>,
    #[serde(default)]
    pub timestamp: u64,
    /// Declares a measurement that intentionally carries no intrinsic value.
    #[serde(default)]
    pub noop: bool,
}

impl Measurement {
    pub fn new(targets: Vec<Target>) -> Self {
        Measurement {
            targets,
            ..Default::default()
        }
    }

    pub fn with(mut self, name: &str, v: Variable) -> Self {
        self.intrinsic.insert(name.to_string(), v);
        self
    }

    pub fn with_context(mut self, name: &str, v: Variable) -> Self {
        self.contextual.insert(name.to_string(), v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.intrinsic.is_empty() && !self.noop {
            return Err(Error::validation(
                "measurement needs an intrinsic variable or a no-op marker",
            ));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Variable> {
        self.intrinsic.get(name).ok_or_else(|| Error::missing(name))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.get(name)?
            .as_f64()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::missing(name))
    }

    pub fn index(&self, name: &str) -> Result<i64> {
        match self.get(name)? {
            Variable::Index(i) => Ok(*i),
            Variable::Scalar(v) if v.fract() == 0.0 && v.is_finite() => Ok(*v as i64),
            _ => Err(Error::missing(name)),
        }
    }

    pub fn context_f64(&self, name: &str) -> Option<f64> {
        self.contextual
            .get(name)
            .or_else(|| self.intrinsic.get(name))
            .and_then(Variable::as_f64)
            .filter(|v| v.is_finite())
    }

    pub fn context_text(&self, name: &str) -> Option<&str> {
        match self.contextual.get(name) {
            Some(Variable::Text(s)) => Some(s),
            _ => None,
        }
    }
}

/// Interaction kinds offered by the interface; each has exactly one translator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    CritiqueButton,
    RatingSlider,
    PairwiseChoice,
    RankingList,
    ActionAdvice,
    Demonstration,
    SegmentCorrection,
    FeatureBrush,
    VerbalComment,
    ReactionSignal,
    MetaAnswer,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 11] = [
        InteractionKind::CritiqueButton,
        InteractionKind::RatingSlider,
        InteractionKind::PairwiseChoice,
        InteractionKind::RankingList,
        InteractionKind::ActionAdvice,
        InteractionKind::Demonstration,
        InteractionKind::SegmentCorrection,
        InteractionKind::FeatureBrush,
        InteractionKind::VerbalComment,
        InteractionKind::ReactionSignal,
        InteractionKind::MetaAnswer,
    ];

    /// Kinds whose measurement is the feedback value up to re-typing.
    pub fn is_explicit(self) -> bool {
        !matches!(
            self,
            InteractionKind::VerbalComment
                | InteractionKind::ReactionSignal
                | InteractionKind::MetaAnswer
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            InteractionKind::CritiqueButton => "critique_button",
            InteractionKind::RatingSlider => "rating_slider",
            InteractionKind::PairwiseChoice => "pairwise_choice",
            InteractionKind::RankingList => "ranking_list",
            InteractionKind::ActionAdvice => "action_advice",
            InteractionKind::Demonstration => "demonstration",
            InteractionKind::SegmentCorrection => "segment_correction",
            InteractionKind::FeatureBrush => "feature_brush",
            InteractionKind::VerbalComment => "verbal_comment",
            InteractionKind::ReactionSignal => "reaction_signal",
            InteractionKind::MetaAnswer => "meta_answer",
        }
    }
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub fatigue: f64,
    pub knowledge: f64,
    pub rationality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Proactive,
    #[default]
    Reactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceState {
    pub kinds: Vec<InteractionKind>,
    pub mode: QueryMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub model_version: u64,
    pub mean_uncertainty: f64,
}

/// Conditions under which a measurement was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    pub human: HumanState,
    pub interface: InterfaceState,
    pub agent: AgentState,
}

impl Default for FeedbackState {
    fn default() -> Self {
        FeedbackState {
            human: HumanState {
                fatigue: 0.0,
                knowledge: 1.0,
                rationality: 1.0,
            },
            interface: InterfaceState {
                kinds: InteractionKind::ALL.to_vec(),
                mode: QueryMode::Reactive,
            },
            agent: AgentState::default(),
        }
    }
}

/// Processed feedback: targets mapped to a value under a context.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackInstance {
    pub instance_id: u64,
    pub source_id: String,
    pub timestamp: u64,
    pub profile: DimensionProfile,
    pub targets: Vec<Target>,
    pub value: FeedbackValue,
    pub context: ContextEncoding,
}

impl FeedbackInstance {
    /// Builds an instance, rejecting it if [`validate_instance`] finds problems.
    pub fn new(
        instance_id: u64,
        source_id: impl Into<String>,
        timestamp: u64,
        profile: DimensionProfile,
        targets: Vec<Target>,
        value: FeedbackValue,
        context: ContextEncoding,
    ) -> Result<Self> {
        let inst = FeedbackInstance {
            instance_id,
            source_id: source_id.into(),
            timestamp,
            profile,
            targets,
            value,
            context,
        };
        validate_instance(&inst).map_err(Error::Validation)?;
        Ok(inst)
    }
}

/// Every violated instance invariant, or `Ok` when there are none.
pub fn validate_instance(inst: &FeedbackInstance) -> std::result::Result<(), Vec<String>> {
    let mut v = Vec::new();
    let n = inst.targets.len();
    let relation = inst.value.is_relation();
    if relation && n < 2 {
        v.push("relative requires ≥2 targets".to_string());
    }
    if !relation && n != 1 {
        v.push(format!(
            "absolute feedback requires exactly 1 target, got {n}"
        ));
    }
    for t in &inst.targets {
        if let Err(Error::Validation(msgs)) = t.validate() {
            v.extend(msgs);
        }
    }
    match &inst.value {
        FeedbackValue::Binary(_) => {}
        FeedbackValue::Discrete { level, levels } => {
            if *levels < 2 {
                v.push(format!(
                    "discrete scale needs at least 2 levels, got {levels}"
                ));
            } else if *level < 1 || level > levels {
                v.push(format!("level out of range: {level} of {levels}"));
            }
        }
        FeedbackValue::Continuous(x) => {
            if !x.is_finite() || x.abs() > 1.0 {
                v.push(format!("continuous value {x} outside [-1, 1]"));
            }
        }
        FeedbackValue::Relation(r) => {
            if n >= 2 {
                v.extend(r.violations(n));
            }
        }
        FeedbackValue::Instruction(w) => {
            if !(*w > 0.0 && *w <= 1.0) {
                v.push(format!("instruction weight {w} outside (0, 1]"));
            }
        }
    }
    let missing = inst.profile.missing_dimensions();
    if !missing.is_empty() {
        v.push(format!("profile leaves {} unassigned", missing.join(", ")));
    }
    let sets = inst.value.compatible_choice_sets();
    if !sets.iter().any(|s| inst.profile.choice_set.contains(*s)) {
        v.push(format!(
            "value domain does not match profile D8 ({})",
            inst.profile.choice_set
        ));
    }
    let wanted = if relation {
        TargetRelation::Relative
    } else {
        TargetRelation::Absolute
    };
    if !inst.profile.relation.contains(wanted) {
        v.push(format!(
            "value is {wanted:?} but profile D4 is {}",
            inst.profile.relation
        ));
    }
    if inst.context.0.iter().any(|c| !c.is_finite()) {
        v.push("context encoding has non-finite entries".to_string());
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(ep: u64) -> Target {
        Target::segment(EpisodeId(ep), 0..4).unwrap()
    }

    fn instance(
        targets: Vec<Target>,
        value: FeedbackValue,
        kind: FeedbackType,
    ) -> FeedbackInstance {
        FeedbackInstance {
            instance_id: 1,
            source_id: "oracle-0".into(),
            timestamp: 0,
            profile: classify(kind),
            targets,
            value,
            context: ContextEncoding::default(),
        }
    }

    #[test]
    fn make_target_examples() {
        match Target::segment(EpisodeId(3), 3..7).unwrap() {
            Target::Segment { start, end, .. } => assert_eq!(end - start, 4),
            _ => unreachable!(),
        }
        assert!(Target::features([4]).is_ok());
        assert!(matches!(
            Target::segment(EpisodeId(0), 5..5),
            Err(Error::Validation(_))
        ));
        assert!(Target::features([8]).is_err());
    }

    #[test]
    fn relation_over_one_target_is_rejected() {
        let inst = instance(
            vec![seg(0)],
            FeedbackValue::Relation(Ranking(vec![vec![0]])),
            FeedbackType::BehaviorPref,
        );
        let errs = validate_instance(&inst).unwrap_err();
        assert!(
            errs.iter().any(|e| e == "relative requires ≥2 targets"),
            "{errs:?}"
        );
    }

    #[test]
    fn consistent_binary_instance_is_ok() {
        let inst = instance(
            vec![seg(0)],
            FeedbackValue::Binary(Polarity::Positive),
            FeedbackType::FeatureSaliency,
        );
        assert_eq!(validate_instance(&inst), Ok(()));
    }

    #[test]
    fn discrete_level_out_of_range() {
        let inst = instance(
            vec![seg(0)],
            FeedbackValue::Discrete {
                level: 7,
                levels: 5,
            },
            FeedbackType::Critique,
        );
        let errs = validate_instance(&inst).unwrap_err();
        assert!(errs.iter().any(|e| e.starts_with("level out of range")));
    }

    #[test]
    fn choice_set_mismatch_is_reported() {
        let inst = instance(
            vec![seg(0)],
            FeedbackValue::Continuous(0.2),
            FeedbackType::Critique,
        );
        assert!(validate_instance(&inst).is_err());
    }

    #[test]
    fn ranking_pairs() {
        let r = Ranking(vec![vec![0], vec![1, 2]]);
        assert_eq!(r.strict_pairs(), vec![(0, 1), (0, 2)]);
        assert_eq!(r.tie_pairs(), vec![(1, 2)]);
    }

    #[test]
    fn rescaled_levels_span_unit_interval() {
        assert_eq!(rescale_level(1, 5), -1.0);
        assert_eq!(rescale_level(3, 5), 0.0);
        assert_eq!(rescale_level(5, 5), 1.0);
    }

    #[test]
    fn measurement_requires_content_or_noop() {
        assert!(Measurement::default().validate().is_err());
        let noop = Measurement {
            noop: true,
            ..Default::default()
        };
        assert!(noop.validate().is_ok());
    }
}
