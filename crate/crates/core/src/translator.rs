//! Translation of raw measurements into feedback instances and context.
//!
//! Explicit interaction kinds are re-typed without changing their numeric
//! content. Implicit kinds (verbal comments, reaction signals) pass through a
//! parameterized classifier first. Meta answers only ever update the context.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::dimensions::TemporalGranularity;
use crate::feedback::{
    classify, vars, ContextEncoding, FeedbackInstance, FeedbackState, FeedbackType, FeedbackValue,
    InteractionKind, Measurement, Polarity, Ranking, Target, Variable, CONTEXT_DIM,
};
use crate::gridworld::{Action, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorParams {
    /// Reaction-signal threshold.
    pub theta: f64,
    /// Defaults to `0.1 * theta`.
    pub hysteresis: Option<f64>,
    /// Floor applied to demonstration weights.
    pub min_instruction_weight: f64,
    pub response_time_scale_ms: f64,
    pub session_time_scale_s: f64,
    pub annotator_buckets: u32,
}

impl Default for TranslatorParams {
    fn default() -> Self {
        TranslatorParams {
            theta: 0.5,
            hysteresis: None,
            min_instruction_weight: 0.05,
            response_time_scale_ms: 10_000.0,
            session_time_scale_s: 3_600.0,
            annotator_buckets: 16,
        }
    }
}

impl TranslatorParams {
    pub fn hysteresis(&self) -> f64 {
        self.hysteresis.unwrap_or(0.1 * self.theta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Word-level sentiment lexicon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: HashMap<String, i8>,
}

const DEFAULT_LEXICON: &str = include_str!("../assets/lexicon.txt");

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl Lexicon {
    /// One `word +1` or `word -1` per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut words = HashMap::new();
        let mut offset = 0;
        for line in text.lines() {
            let content = line.split('#').next().unwrap_or("").trim();
            if !content.is_empty() {
                let mut parts = content.split_whitespace();
                let (word, sign) = (parts.next(), parts.next());
                let sign = match sign {
                    Some("+1") => 1,
                    Some("-1") => -1,
                    _ => {
                        return Err(Error::Parse {
                            offset,
                            message: format!("lexicon line `{content}` needs a +1/-1 sign"),
                        })
                    }
                };
                words.insert(word.unwrap_or_default().to_lowercase(), sign);
            }
            offset += line.len() + 1;
        }
        Ok(Lexicon { words })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn score(&self, token: &str) -> i8 {
        self.words.get(token).copied().unwrap_or(0)
    }
}

/// Sign of (positive hits - negative hits).
pub fn lexicon_sentiment(lexicon: &Lexicon, tokens: &[String]) -> i8 {
    let total: i64 = tokens.iter().map(|t| lexicon.score(t) as i64).sum();
    total.signum() as i8
}

/// Thresholds the mean of a signal window.
///
/// Emits `+1` above `theta`, `-1` below `-theta`, `0` otherwise, with
/// confidence `min(1, |mean| / theta)`. When `previous` is the opposite sign
/// of the candidate emission, the mean must clear the threshold by a further
/// `hysteresis` before the sign flips; otherwise `0` is emitted.
pub fn threshold_signal(
    samples: &[f64],
    theta: f64,
    hysteresis: f64,
    previous: i8,
) -> Result<(i8, f64)> {
    if samples.is_empty() {
        return Err(Error::missing(vars::SAMPLES));
    }
    if !(theta > hysteresis && hysteresis >= 0.0) {
        return Err(Error::Usage(format!(
            "threshold {theta} must exceed hysteresis {hysteresis} >= 0"
        )));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    if !mean.is_finite() {
        return Err(Error::missing(vars::SAMPLES));
    }
    let confidence = (mean.abs() / theta).min(1.0);
    let candidate: i8 = if mean > theta {
        1
    } else if mean < -theta {
        -1
    } else {
        0
    };
    let value = if candidate != 0 && candidate == -previous && mean.abs() <= theta + hysteresis {
        0
    } else {
        candidate
    };
    Ok((value, confidence))
}

/// Result of translating one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    /// `None` for context-only or below-threshold measurements. The instance id
    /// is left at zero for the caller to assign.
    pub instance: Option<FeedbackInstance>,
    pub context: ContextEncoding,
}

/// Feedback type whose classification an interaction kind's instances carry.
pub fn feedback_type(kind: InteractionKind, m: &Measurement) -> Option<FeedbackType> {
    use InteractionKind::*;
    Some(match kind {
        CritiqueButton => FeedbackType::Critique,
        RatingSlider if !m.intrinsic.contains_key(vars::LEVELS) => FeedbackType::Shaping,
        RatingSlider
            if m.targets.first().map(Target::granularity) == Some(TemporalGranularity::Episode) =>
        {
            FeedbackType::OutcomeRating
        }
        RatingSlider => FeedbackType::Critique,
        PairwiseChoice | RankingList => FeedbackType::BehaviorPref,
        ActionAdvice | SegmentCorrection => FeedbackType::Correction,
        Demonstration => FeedbackType::Demonstration,
        FeatureBrush => FeedbackType::FeatureSaliency,
        VerbalComment => FeedbackType::Shaping,
        ReactionSignal => FeedbackType::Reaction,
        MetaAnswer => return None,
    })
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Default)]
pub struct Translator {
    pub params: TranslatorParams,
    pub lexicon: Lexicon,
}

impl Translator {
    pub fn new(params: TranslatorParams, lexicon: Lexicon) -> Self {
        Translator { params, lexicon }
    }

    /// Context encoding of a measurement's contextual variables.
    ///
    /// Missing entries default to 0, except self-confidence (0.5). An absent
    /// annotator id falls in bucket 0.
    pub fn extract_context(&self, m: &Measurement, _fs: &FeedbackState) -> ContextEncoding {
        let p = &self.params;
        let unit = |v: f64| v.clamp(0.0, 1.0);
        let sign = |name| {
            m.context_f64(name)
                .map_or(0.0, |v: f64| if v == 0.0 { 0.0 } else { v.signum() })
        };
        let mut c = [0.0; CONTEXT_DIM];
        c[ContextEncoding::RESPONSE_TIME] = m
            .context_f64(vars::RESPONSE_TIME_MS)
            .map_or(0.0, |v| unit(v / p.response_time_scale_ms));
        c[ContextEncoding::SESSION_TIME] = m
            .context_f64(vars::SESSION_ELAPSED_S)
            .map_or(0.0, |v| unit(v / p.session_time_scale_s));
        c[ContextEncoding::CONFIDENCE] = m.context_f64(vars::SELF_CONFIDENCE).map_or(0.5, unit);
        c[ContextEncoding::SKILL] = sign(vars::SKILL_ANSWER);
        c[ContextEncoding::DISTINGUISHABILITY] = sign(vars::DISTINGUISHABILITY_ANSWER);
        c[ContextEncoding::ANNOTATOR] = m.context_text(vars::ANNOTATOR_ID).map_or(0.0, |id| {
            let buckets = p.annotator_buckets.max(1) as u64;
            (fnv1a(id) % buckets) as f64 / buckets as f64
        });
        ContextEncoding(c)
    }

    pub fn translate(
        &self,
        m: &Measurement,
        fs: &FeedbackState,
        kind: InteractionKind,
    ) -> Result<Translation> {
        let context = self.extract_context(m, fs);
        let Some(ftype) = feedback_type(kind, m) else {
            return Ok(Translation {
                instance: None,
                context,
            });
        };
        let emitted = match kind {
            InteractionKind::CritiqueButton => {
                let target = single_target(m)?;
                let polarity = Polarity::from_sign(m.scalar(vars::OPTION)?)
                    .ok_or_else(|| Error::missing(vars::OPTION))?;
                Some((vec![target], FeedbackValue::Binary(polarity), context))
            }
            InteractionKind::RatingSlider => {
                let target = single_target(m)?;
                let value = if m.intrinsic.contains_key(vars::LEVELS) {
                    let levels = u32::try_from(m.index(vars::LEVELS)?)
                        .map_err(|_| Error::missing(vars::LEVELS))?;
                    let level = u32::try_from(m.index(vars::LEVEL)?)
                        .map_err(|_| Error::missing(vars::LEVEL))?;
                    FeedbackValue::Discrete { level, levels }
                } else {
                    FeedbackValue::Continuous(m.scalar(vars::VALUE)?)
                };
                Some((vec![target], value, context))
            }
            InteractionKind::PairwiseChoice => {
                let targets = exactly(m, 2)?;
                let ranking = match m.index(vars::CHOICE)? {
                    0 => Ranking::prefer(0, 1),
                    1 => Ranking::prefer(1, 0),
                    -1 => Ranking::tie(0, 1),
                    _ => return Err(Error::missing(vars::CHOICE)),
                };
                Some((targets, FeedbackValue::Relation(ranking), context))
            }
            InteractionKind::RankingList => {
                if m.targets.len() < 2 {
                    return Err(Error::missing("targets"));
                }
                let order = match m.get(vars::ORDER)? {
                    Variable::Order(groups) => groups.clone(),
                    _ => return Err(Error::missing(vars::ORDER)),
                };
                Some((
                    m.targets.clone(),
                    FeedbackValue::Relation(Ranking(order)),
                    context,
                ))
            }
            InteractionKind::ActionAdvice => {
                let (cell, taken) = match single_target(m)? {
                    Target::StateAction { cell, action, .. } => (cell, action),
                    _ => return Err(Error::missing("targets")),
                };
                let advised = usize::try_from(m.index(vars::ADVISED_ACTION)?)
                    .ok()
                    .and_then(Action::from_index)
                    .ok_or_else(|| Error::missing(vars::ADVISED_ACTION))?;
                let original = Target::state_action(cell, taken);
                let corrected = Target::state_action(cell, advised).into_hypothetical();
                correction_parts(original, corrected)
                    .map(|(t, v)| (t, v, context))
                    .map(Some)?
            }
            InteractionKind::Demonstration => {
                let target = match single_target(m)? {
                    t @ Target::Segment { .. } => t.into_hypothetical(),
                    _ => return Err(Error::missing("targets")),
                };
                let mut weight = m.context_f64(vars::WEIGHT).unwrap_or(1.0);
                if fs.human.knowledge < 1.0 {
                    weight *= fs.human.knowledge;
                }
                let weight = weight.clamp(self.params.min_instruction_weight, 1.0);
                Some((vec![target], FeedbackValue::Instruction(weight), context))
            }
            InteractionKind::SegmentCorrection => {
                let targets = exactly(m, 2)?;
                let mut it = targets.into_iter();
                let original = it.next().expect("two targets");
                let corrected = it.next().expect("two targets");
                correction_parts(original, corrected).map(|(t, v)| Some((t, v, context)))?
            }
            InteractionKind::FeatureBrush => {
                let features: BTreeSet<usize> = match m.get(vars::FEATURES)? {
                    Variable::Indices(ix) => ix.iter().copied().collect(),
                    _ => return Err(Error::missing(vars::FEATURES)),
                };
                if features.is_empty() || features.iter().any(|i| *i >= FEATURE_DIM) {
                    return Err(Error::missing(vars::FEATURES));
                }
                let mask = match m.intrinsic.get(vars::CELLS) {
                    Some(Variable::Cells(cells)) => Some(cells.iter().copied().collect()),
                    Some(_) => return Err(Error::missing(vars::CELLS)),
                    None => None,
                };
                let polarity = Polarity::from_sign(m.scalar(vars::VALENCE)?)
                    .ok_or_else(|| Error::missing(vars::VALENCE))?;
                Some((
                    vec![Target::FeatureSet { features, mask }],
                    FeedbackValue::Binary(polarity),
                    context,
                ))
            }
            InteractionKind::VerbalComment => {
                let target = single_target(m)?;
                let tokens = match m.get(vars::TOKENS)? {
                    Variable::Tokens(t) => t,
                    _ => return Err(Error::missing(vars::TOKENS)),
                };
                Polarity::from_sign(lexicon_sentiment(&self.lexicon, tokens) as f64)
                    .map(|p| (vec![target], FeedbackValue::Binary(p), context))
            }
            InteractionKind::ReactionSignal => {
                let samples = match m.get(vars::SAMPLES)? {
                    Variable::Signal(s) => s,
                    _ => return Err(Error::missing(vars::SAMPLES)),
                };
                let previous = match m.context_f64("previous_emission") {
                    Some(v) if v > 0.0 => 1,
                    Some(v) if v < 0.0 => -1,
                    _ => 0,
                };
                let (value, confidence) = threshold_signal(
                    samples,
                    self.params.theta,
                    self.params.hysteresis(),
                    previous,
                )?;
                let context = context.with_confidence(confidence);
                if value == 0 {
                    return Ok(Translation {
                        instance: None,
                        context,
                    });
                }
                let target = single_target(m)?;
                let level = if value > 0 { 3 } else { 1 };
                Some((
                    vec![target],
                    FeedbackValue::Discrete { level, levels: 3 },
                    context,
                ))
            }
            InteractionKind::MetaAnswer => None,
        };
        let Some((targets, value, context)) = emitted else {
            return Ok(Translation {
                instance: None,
                context,
            });
        };
        let source = m
            .context_text(vars::ANNOTATOR_ID)
            .unwrap_or("anonymous")
            .to_string();
        let instance = FeedbackInstance::new(
            0,
            source,
            m.timestamp,
            classify(ftype),
            targets,
            value,
            context,
        )?;
        Ok(Translation {
            instance: Some(instance),
            context,
        })
    }
}

fn single_target(m: &Measurement) -> Result<Target> {
    Ok(exactly(m, 1)?.remove(0))
}

fn exactly(m: &Measurement, n: usize) -> Result<Vec<Target>> {
    if m.targets.len() != n {
        return Err(Error::missing("targets"));
    }
    Ok(m.targets.clone())
}

fn correction_parts(original: Target, corrected: Target) -> Result<(Vec<Target>, FeedbackValue)> {
    if original == corrected {
        return Err(Error::validation(
            "correction must differ from the original",
        ));
    }
    Ok((
        vec![corrected, original],
        FeedbackValue::Relation(Ranking::prefer(0, 1)),
    ))
}

/// `corrected ≻ original`, classified as a correction.
pub fn translate_correction(
    original: Target,
    corrected: Target,
    human_authored: bool,
    context: ContextEncoding,
    source_id: &str,
    timestamp: u64,
) -> Result<FeedbackInstance> {
    let corrected = if human_authored {
        corrected.into_hypothetical()
    } else {
        corrected
    };
    let (targets, value) = correction_parts(original, corrected)?;
    FeedbackInstance::new(
        0,
        source_id,
        timestamp,
        classify(FeedbackType::Correction),
        targets,
        value,
        context,
    )
}

/// Pairwise instances implied by a relation over several targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingPairs {
    /// Id of the ranking the pairs came from; every pair carries it.
    pub provenance: u64,
    /// `A ≻ B` instances, one per ordered pair across tie groups.
    pub preferences: Vec<FeedbackInstance>,
    /// `A = B` records, one per pair inside a tie group.
    pub ties: Vec<FeedbackInstance>,
}

/// Splits a ranking instance into one two-target instance per pair.
pub fn decompose_ranking(ranking: &FeedbackInstance) -> Result<RankingPairs> {
    let FeedbackValue::Relation(order) = &ranking.value else {
        return Err(Error::Usage(
            "decompose_ranking needs a relation value".into(),
        ));
    };
    let distinct: BTreeSet<&Target> = ranking.targets.iter().collect();
    if distinct.len() != ranking.targets.len() {
        return Err(Error::validation("ranking lists a target twice"));
    }
    if ranking.targets.len() < 2 {
        return Err(Error::validation("relative requires ≥2 targets"));
    }
    let pair = |a: usize, b: usize, value: Ranking| {
        FeedbackInstance::new(
            ranking.instance_id,
            ranking.source_id.clone(),
            ranking.timestamp,
            ranking.profile.clone(),
            vec![ranking.targets[a].clone(), ranking.targets[b].clone()],
            FeedbackValue::Relation(value),
            ranking.context,
        )
    };
    Ok(RankingPairs {
        provenance: ranking.instance_id,
        preferences: order
            .strict_pairs()
            .into_iter()
            .map(|(a, b)| pair(a, b, Ranking::prefer(0, 1)))
            .collect::<Result<_>>()?,
        ties: order
            .tie_pairs()
            .into_iter()
            .map(|(a, b)| pair(a, b, Ranking::tie(0, 1)))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::validate_instance;
    use crate::gridworld::{Cell, EpisodeId};

    fn seg(ep: u64) -> Target {
        Target::segment(EpisodeId(ep), 0..4).unwrap()
    }

    fn tokens(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn translate(m: &Measurement, kind: InteractionKind) -> Result<Translation> {
        Translator::default().translate(m, &FeedbackState::default(), kind)
    }

    #[test]
    fn critique_is_identity() {
        let m = Measurement::new(vec![seg(0)]).with(vars::OPTION, Variable::Scalar(1.0));
        let inst = translate(&m, InteractionKind::CritiqueButton)
            .unwrap()
            .instance
            .unwrap();
        assert_eq!(inst.value, FeedbackValue::Binary(Polarity::Positive));
        assert_eq!(inst.targets, vec![seg(0)]);
        assert_eq!(inst.profile, classify(FeedbackType::Critique));
    }

    #[test]
    fn meta_answer_only_updates_context() {
        let m = Measurement::new(vec![]).with(vars::SKILL_ANSWER, Variable::Scalar(1.0));
        let t = translate(&m, InteractionKind::MetaAnswer).unwrap();
        assert!(t.instance.is_none());
        assert_eq!(t.context.0[ContextEncoding::SKILL], 1.0);
    }

    #[test]
    fn flat_reaction_signal_is_neutral() {
        let m = Measurement::new(vec![seg(0)]).with(vars::SAMPLES, Variable::Signal(vec![0.0; 10]));
        let t = translate(&m, InteractionKind::ReactionSignal).unwrap();
        assert!(t.instance.is_none());
        assert_eq!(t.context.confidence(), 0.0);
    }

    #[test]
    fn missing_variable_is_named() {
        let m = Measurement::new(vec![seg(0)]).with("unrelated", Variable::Scalar(1.0));
        match translate(&m, InteractionKind::CritiqueButton) {
            Err(Error::Translation { variable }) => assert_eq!(variable, vars::OPTION),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ranking_decomposition() {
        let ranking = |order: Vec<Vec<usize>>, n: u64| {
            FeedbackInstance::new(
                9,
                "u",
                0,
                classify(FeedbackType::BehaviorPref),
                (0..n).map(seg).collect(),
                FeedbackValue::Relation(Ranking(order)),
                ContextEncoding::default(),
            )
            .unwrap()
        };
        let abc = decompose_ranking(&ranking(vec![vec![0], vec![1], vec![2]], 3)).unwrap();
        let pairs: Vec<_> = abc.preferences.iter().map(|i| i.targets.clone()).collect();
        assert_eq!(
            pairs,
            vec![
                vec![seg(0), seg(1)],
                vec![seg(0), seg(2)],
                vec![seg(1), seg(2)]
            ]
        );
        assert!(abc.ties.is_empty());
        assert_eq!(abc.provenance, 9);

        let ab = decompose_ranking(&ranking(vec![vec![0], vec![1]], 2)).unwrap();
        assert_eq!(ab.preferences.len(), 1);

        let tied = decompose_ranking(&ranking(vec![vec![0], vec![1, 2]], 3)).unwrap();
        assert_eq!(tied.preferences.len(), 2);
        assert_eq!(tied.ties.len(), 1);
        assert_eq!(tied.ties[0].targets, vec![seg(1), seg(2)]);
    }

    #[test]
    fn duplicate_ranking_target_is_rejected() {
        let inst = FeedbackInstance {
            instance_id: 0,
            source_id: "u".into(),
            timestamp: 0,
            profile: classify(FeedbackType::BehaviorPref),
            targets: vec![seg(0), seg(0)],
            value: FeedbackValue::Relation(Ranking::prefer(0, 1)),
            context: ContextEncoding::default(),
        };
        assert!(matches!(
            decompose_ranking(&inst),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn corrections() {
        let edited = Target::segment(EpisodeId(7), 0..4).unwrap();
        let inst = translate_correction(
            seg(0),
            edited.clone(),
            true,
            ContextEncoding::default(),
            "u",
            0,
        )
        .unwrap();
        assert_eq!(inst.targets, vec![edited.into_hypothetical(), seg(0)]);
        assert_eq!(inst.value, FeedbackValue::Relation(Ranking::prefer(0, 1)));
        assert_eq!(inst.profile, classify(FeedbackType::Correction));
        assert!(
            translate_correction(seg(0), seg(0), false, ContextEncoding::default(), "u", 0)
                .is_err()
        );

        let cell = Cell::new(2, 2);
        let m = Measurement::new(vec![Target::state_action(cell, Action::Up)]).with(
            vars::ADVISED_ACTION,
            Variable::Index(Action::Right.index() as i64),
        );
        let inst = translate(&m, InteractionKind::ActionAdvice)
            .unwrap()
            .instance
            .unwrap();
        assert_eq!(
            inst.targets,
            vec![
                Target::state_action(cell, Action::Right).into_hypothetical(),
                Target::state_action(cell, Action::Up)
            ]
        );
    }

    #[test]
    fn lexicon_examples() {
        let lex = Lexicon::default();
        assert!(lex.len() >= 35);
        assert_eq!(lexicon_sentiment(&lex, &tokens(&["good", "job"])), 1);
        assert_eq!(lexicon_sentiment(&lex, &tokens(&["bad"])), -1);
        assert_eq!(lexicon_sentiment(&lex, &tokens(&["the", "robot"])), 0);
    }

    #[test]
    fn verbal_comment_translates_through_lexicon() {
        let m = Measurement::new(vec![seg(1)])
            .with(vars::TOKENS, Variable::Tokens(tokens(&["great", "work"])));
        let inst = translate(&m, InteractionKind::VerbalComment)
            .unwrap()
            .instance
            .unwrap();
        assert_eq!(inst.value, FeedbackValue::Binary(Polarity::Positive));
        let neutral =
            Measurement::new(vec![seg(1)]).with(vars::TOKENS, Variable::Tokens(tokens(&["the"])));
        assert!(translate(&neutral, InteractionKind::VerbalComment)
            .unwrap()
            .instance
            .is_none());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(
            threshold_signal(&[0.0, 0.0], 0.5, 0.05, 0).unwrap(),
            (0, 0.0)
        );
        assert_eq!(threshold_signal(&[0.5], 0.5, 0.05, 0).unwrap(), (0, 1.0));
        assert_eq!(
            threshold_signal(&[1.0, 1.0], 0.5, 0.05, 0).unwrap(),
            (1, 1.0)
        );
        assert!(threshold_signal(&[], 0.5, 0.05, 0).is_err());
    }

    #[test]
    fn hysteresis_suppresses_marginal_flips() {
        // Mean -0.52 clears -theta but not -(theta + hysteresis).
        assert_eq!(threshold_signal(&[-0.52], 0.5, 0.05, 1).unwrap().0, 0);
        assert_eq!(threshold_signal(&[-0.52], 0.5, 0.05, 0).unwrap().0, -1);
        assert_eq!(threshold_signal(&[-0.6], 0.5, 0.05, 1).unwrap().0, -1);
    }

    #[test]
    fn context_defaults_and_determinism() {
        let tr = Translator::default();
        let fs = FeedbackState::default();
        let empty = Measurement::new(vec![]);
        assert_eq!(
            tr.extract_context(&empty, &fs).0,
            [0.0, 0.0, 0.5, 0.0, 0.0, 0.0]
        );
        let zero_rt = empty
            .clone()
            .with_context(vars::RESPONSE_TIME_MS, Variable::Scalar(0.0))
            .with_context(vars::ANNOTATOR_ID, Variable::Text("ann-3".into()));
        let c = tr.extract_context(&zero_rt, &fs);
        assert_eq!(c.0[0], 0.0);
        assert_eq!(c, tr.extract_context(&zero_rt.clone(), &fs));
        assert!(c.0[5] >= 0.0 && c.0[5] < 1.0);
    }

    #[test]
    fn demonstration_weight_scaled_by_knowledge() {
        let mut fs = FeedbackState::default();
        fs.human.knowledge = 0.5;
        let m = Measurement::new(vec![Target::segment(EpisodeId(3), 0..5).unwrap()])
            .with(vars::ACTIONS, Variable::Actions(vec![Action::Right; 5]));
        let inst = Translator::default()
            .translate(&m, &fs, InteractionKind::Demonstration)
            .unwrap()
            .instance
            .unwrap();
        assert_eq!(inst.value, FeedbackValue::Instruction(0.5));
        assert!(inst.targets[0].is_hypothetical());
        assert_eq!(validate_instance(&inst), Ok(()));
    }

    #[test]
    fn feature_brush_on_lava() {
        let m = Measurement::new(vec![])
            .with(vars::FEATURES, Variable::Indices(vec![4]))
            .with(vars::VALENCE, Variable::Scalar(-1.0))
            .with(
                vars::CELLS,
                Variable::Cells(vec![Cell::new(3, 1), Cell::new(3, 2)]),
            );
        let inst = translate(&m, InteractionKind::FeatureBrush)
            .unwrap()
            .instance
            .unwrap();
        assert_eq!(inst.value, FeedbackValue::Binary(Polarity::Negative));
        match &inst.targets[0] {
            Target::FeatureSet { features, mask } => {
                assert_eq!(features.iter().copied().collect::<Vec<_>>(), vec![4]);
                assert_eq!(mask.as_ref().unwrap().len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
