//! The nine feedback dimensions, their closed attribute vocabularies, and the
//! classification of established feedback types.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An attribute from one dimension's closed vocabulary.
pub trait Attribute: Copy + Ord + fmt::Debug + 'static {
    /// Dimension tag, `D1` through `D9`.
    const DIMENSION: &'static str;
    const ALL: &'static [Self];
    fn label(self) -> &'static str;
    fn from_label(s: &str) -> Option<Self>;
}

macro_rules! attributes {
    ($(#[$meta:meta])* $name:ident = $dim:literal { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl Attribute for $name {
            const DIMENSION: &'static str = $dim;
            const ALL: &'static [Self] = &[$($name::$variant),+];

            fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            fn from_label(s: &str) -> Option<Self> {
                match s {
                    $($label => Some($name::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

attributes!(
    /// D1: what the human means to convey.
    Intent = "D1" { Evaluate => "Evaluate", Instruct => "Instruct", Describe => "Describe", NoIntent => "None" }
);
attributes!(
    /// D2: whether the measurement already is the feedback value.
    Expression = "D2" { Explicit => "Explicit", Implicit => "Implicit" }
);
attributes!(
    /// D3: who initiates the interaction.
    Engagement = "D3" { Proactive => "Proactive", Reactive => "Reactive" }
);
attributes!(
    /// D4: one target or a relation between several.
    TargetRelation = "D4" { Absolute => "Absolute", Relative => "Relative" }
);
attributes!(
    /// D5: behavior instances or features.
    ContentLevel = "D5" { Instance => "Instance", Feature => "Feature" }
);
attributes!(
    /// D6: observed rollouts or hypothetical behavior.
    TargetActuality = "D6" { Actual => "Actual", Hypothetical => "Hypothetical" }
);
attributes!(
    /// D7: temporal granularity of the target.
    TemporalGranularity = "D7" {
        Step => "Step",
        Segment => "Segment",
        Episode => "Episode",
        EntireBehavior => "EntireBehavior",
    }
);
attributes!(
    /// D8: size of the set a feedback value is chosen from.
    ChoiceSet = "D8" { Binary => "Binary", Discrete => "Discrete", Continuous => "Continuous" }
);
attributes!(
    /// D9: sole learning signal or one of several.
    Exclusivity = "D9" { Exclusive => "Exclusive", Augmenting => "Augmenting" }
);

/// Whether an attribute always holds for a feedback type or only may hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mark {
    Fixed,
    Allowed,
}

impl Mark {
    pub fn symbol(self) -> char {
        match self {
            Mark::Fixed => '!',
            Mark::Allowed => '?',
        }
    }

    pub fn from_symbol(c: char) -> Option<Mark> {
        match c {
            '!' => Some(Mark::Fixed),
            '?' => Some(Mark::Allowed),
            _ => None,
        }
    }
}

/// The attributes assigned for one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Selection<A: Attribute>(BTreeMap<A, Mark>);

impl<A: Attribute> Selection<A> {
    pub fn new(entries: impl IntoIterator<Item = (A, Mark)>) -> Self {
        Selection(entries.into_iter().collect())
    }

    pub fn fixed(attrs: &[A]) -> Self {
        Self::new(attrs.iter().map(|a| (*a, Mark::Fixed)))
    }

    pub fn allowed(attrs: &[A]) -> Self {
        Self::new(attrs.iter().map(|a| (*a, Mark::Allowed)))
    }

    pub fn contains(&self, a: A) -> bool {
        self.0.contains_key(&a)
    }

    pub fn mark(&self, a: A) -> Option<Mark> {
        self.0.get(&a).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (A, Mark)> + '_ {
        self.0.iter().map(|(a, m)| (*a, *m))
    }
}

impl<A: Attribute> fmt::Display for Selection<A> {
    /// `Label!` for fixed and `Label?` for allowed attributes, comma-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (a, m)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}{}", a.label(), m.symbol())?;
        }
        Ok(())
    }
}

impl<A: Attribute> FromStr for Selection<A> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut entries = BTreeMap::new();
        for item in s.split(',') {
            let mark = item
                .chars()
                .last()
                .and_then(Mark::from_symbol)
                .ok_or_else(|| format!("{} attribute `{item}` lacks a mark", A::DIMENSION))?;
            let label = &item[..item.len() - 1];
            let attr = A::from_label(label)
                .ok_or_else(|| format!("unknown {} attribute `{label}`", A::DIMENSION))?;
            if entries.insert(attr, mark).is_some() {
                return Err(format!("duplicate {} attribute `{label}`", A::DIMENSION));
            }
        }
        Ok(Selection(entries))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DimensionProfile {
    pub intent: Selection<Intent>,
    pub expression: Selection<Expression>,
    pub engagement: Selection<Engagement>,
    pub relation: Selection<TargetRelation>,
    pub content: Selection<ContentLevel>,
    pub actuality: Selection<TargetActuality>,
    pub granularity: Selection<TemporalGranularity>,
    pub choice_set: Selection<ChoiceSet>,
    pub exclusivity: Selection<Exclusivity>,
}

impl DimensionProfile {
    /// The nine selections rendered in dimension order.
    pub fn fields(&self) -> [String; 9] {
        [
            self.intent.to_string(),
            self.expression.to_string(),
            self.engagement.to_string(),
            self.relation.to_string(),
            self.content.to_string(),
            self.actuality.to_string(),
            self.granularity.to_string(),
            self.choice_set.to_string(),
            self.exclusivity.to_string(),
        ]
    }

    /// Builds a profile from nine rendered selections in dimension order.
    pub fn from_fields<S: AsRef<str>>(fields: &[S]) -> std::result::Result<Self, String> {
        if fields.len() != 9 {
            return Err(format!("expected 9 dimensions, got {}", fields.len()));
        }
        let f = |i: usize| fields[i].as_ref();
        Ok(DimensionProfile {
            intent: f(0).parse()?,
            expression: f(1).parse()?,
            engagement: f(2).parse()?,
            relation: f(3).parse()?,
            content: f(4).parse()?,
            actuality: f(5).parse()?,
            granularity: f(6).parse()?,
            choice_set: f(7).parse()?,
            exclusivity: f(8).parse()?,
        })
    }

    /// Dimensions left without any attribute.
    pub fn missing_dimensions(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut check = |empty: bool, dim: &'static str| {
            if empty {
                out.push(dim);
            }
        };
        check(self.intent.is_empty(), Intent::DIMENSION);
        check(self.expression.is_empty(), Expression::DIMENSION);
        check(self.engagement.is_empty(), Engagement::DIMENSION);
        check(self.relation.is_empty(), TargetRelation::DIMENSION);
        check(self.content.is_empty(), ContentLevel::DIMENSION);
        check(self.actuality.is_empty(), TargetActuality::DIMENSION);
        check(self.granularity.is_empty(), TemporalGranularity::DIMENSION);
        check(self.choice_set.is_empty(), ChoiceSet::DIMENSION);
        check(self.exclusivity.is_empty(), Exclusivity::DIMENSION);
        out
    }
}

impl fmt::Display for DimensionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, field) in self.fields().iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "D{}={}", i + 1, field)?;
        }
        Ok(())
    }
}

impl FromStr for DimensionProfile {
    type Err = String;

    /// Parses `D1=...;D2=...;...;D9=...`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(';').collect();
        if parts.len() != 9 {
            return Err(format!("expected 9 dimensions, got {}", parts.len()));
        }
        let mut fields = Vec::with_capacity(9);
        for (i, part) in parts.iter().enumerate() {
            let tag = format!("D{}=", i + 1);
            let body = part
                .strip_prefix(&tag)
                .ok_or_else(|| format!("expected `{tag}` at dimension {}", i + 1))?;
            fields.push(body);
        }
        Self::from_fields(&fields)
    }
}

/// Established feedback types with a fixed classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeedbackType {
    Critique,
    Shaping,
    BehaviorPref,
    OutcomeRating,
    ActionAdvice,
    Demonstration,
    DemonstrationWithoutActions,
    Correction,
    FeatureSelection,
    FeatureSaliency,
    GoalSpec,
    GoalPref,
    Gaze,
    Reaction,
}

impl FeedbackType {
    pub const ALL: [FeedbackType; 14] = [
        FeedbackType::Critique,
        FeedbackType::Shaping,
        FeedbackType::BehaviorPref,
        FeedbackType::OutcomeRating,
        FeedbackType::ActionAdvice,
        FeedbackType::Demonstration,
        FeedbackType::DemonstrationWithoutActions,
        FeedbackType::Correction,
        FeedbackType::FeatureSelection,
        FeedbackType::FeatureSaliency,
        FeedbackType::GoalSpec,
        FeedbackType::GoalPref,
        FeedbackType::Gaze,
        FeedbackType::Reaction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeedbackType::Critique => "Critique",
            FeedbackType::Shaping => "Shaping",
            FeedbackType::BehaviorPref => "BehaviorPref",
            FeedbackType::OutcomeRating => "OutcomeRating",
            FeedbackType::ActionAdvice => "ActionAdvice",
            FeedbackType::Demonstration => "Demonstration",
            FeedbackType::DemonstrationWithoutActions => "DemonstrationWithoutActions",
            FeedbackType::Correction => "Correction",
            FeedbackType::FeatureSelection => "FeatureSelection",
            FeedbackType::FeatureSaliency => "FeatureSaliency",
            FeedbackType::GoalSpec => "GoalSpec",
            FeedbackType::GoalPref => "GoalPref",
            FeedbackType::Gaze => "Gaze",
            FeedbackType::Reaction => "Reaction",
        }
    }
}

impl FromStr for FeedbackType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeedbackType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown feedback type `{s}`")))
    }
}

/// Looks up a feedback type by name and returns its classification.
pub fn classify_id(id: &str) -> Result<DimensionProfile> {
    Ok(classify(id.parse()?))
}

pub fn classify(kind: FeedbackType) -> DimensionProfile {
    use ChoiceSet::*;
    use ContentLevel::*;
    use Engagement::*;
    use Exclusivity::*;
    use Expression::*;
    use Intent::*;
    use TargetActuality::*;
    use TargetRelation::*;
    use TemporalGranularity::*;

    fn fx<A: Attribute>(a: &[A]) -> Selection<A> {
        Selection::fixed(a)
    }
    fn al<A: Attribute>(a: &[A]) -> Selection<A> {
        Selection::allowed(a)
    }

    let profile = |intent,
                   expression,
                   engagement,
                   relation,
                   content,
                   actuality,
                   granularity,
                   choice_set,
                   exclusivity| DimensionProfile {
        intent,
        expression,
        engagement,
        relation,
        content,
        actuality,
        granularity,
        choice_set,
        exclusivity,
    };

    match kind {
        FeedbackType::Critique => profile(
            fx(&[Evaluate]),
            fx(&[Explicit]),
            al(&[Proactive, Reactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Actual]),
            al(&[Step, Segment]),
            fx(&[Binary, Discrete]),
            al(&[Exclusive, Augmenting]),
        ),
        FeedbackType::Shaping => profile(
            fx(&[Evaluate]),
            al(&[Explicit, Implicit]),
            al(&[Proactive, Reactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Actual]),
            al(&[Step, Segment, Episode]),
            al(&[Binary, Discrete, Continuous]),
            fx(&[Augmenting]),
        ),
        FeedbackType::BehaviorPref => profile(
            fx(&[Evaluate]),
            fx(&[Explicit]),
            al(&[Proactive, Reactive]),
            fx(&[Relative]),
            fx(&[Instance]),
            fx(&[Actual]),
            al(&[Segment, Episode]),
            al(&[Binary, Discrete]),
            fx(&[Exclusive]),
        ),
        FeedbackType::OutcomeRating => profile(
            fx(&[Evaluate]),
            fx(&[Explicit]),
            fx(&[Reactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Actual]),
            fx(&[Episode]),
            al(&[Binary, Discrete]),
            al(&[Exclusive, Augmenting]),
        ),
        FeedbackType::ActionAdvice => profile(
            fx(&[Instruct]),
            fx(&[Explicit]),
            fx(&[Reactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Actual]),
            fx(&[Step]),
            fx(&[Binary]),
            fx(&[Augmenting]),
        ),
        FeedbackType::Demonstration => profile(
            fx(&[Instruct]),
            fx(&[Explicit]),
            fx(&[Proactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Hypothetical]),
            fx(&[Step]),
            al(&[Binary, Continuous]),
            al(&[Exclusive, Augmenting]),
        ),
        FeedbackType::DemonstrationWithoutActions => profile(
            fx(&[Instruct]),
            fx(&[Implicit]),
            fx(&[Proactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Hypothetical]),
            al(&[Step, Segment]),
            fx(&[Discrete]),
            al(&[Exclusive, Augmenting]),
        ),
        FeedbackType::Correction => profile(
            fx(&[Instruct]),
            al(&[Explicit, Implicit]),
            fx(&[Proactive]),
            fx(&[Relative]),
            fx(&[Instance]),
            fx(&[Actual]),
            al(&[Segment, Episode]),
            al(&[Discrete, Continuous]),
            fx(&[Augmenting]),
        ),
        FeedbackType::FeatureSelection => profile(
            fx(&[Describe]),
            al(&[Explicit, Implicit]),
            al(&[Proactive, Reactive]),
            fx(&[Absolute]),
            fx(&[Feature]),
            fx(&[Actual]),
            al(&[Step, Segment, EntireBehavior]),
            al(&[Binary, Discrete]),
            fx(&[Augmenting]),
        ),
        FeedbackType::FeatureSaliency => profile(
            fx(&[Describe]),
            al(&[Explicit, Implicit]),
            al(&[Proactive, Reactive]),
            fx(&[Absolute]),
            fx(&[Feature]),
            fx(&[Actual]),
            al(&[Step, Segment]),
            fx(&[Binary]),
            fx(&[Augmenting]),
        ),
        FeedbackType::GoalSpec => profile(
            fx(&[Describe]),
            al(&[Explicit, Implicit]),
            al(&[Proactive, Reactive]),
            fx(&[Absolute]),
            fx(&[Feature]),
            fx(&[Hypothetical]),
            fx(&[Step]),
            fx(&[Binary]),
            fx(&[Augmenting]),
        ),
        FeedbackType::GoalPref => profile(
            fx(&[Describe]),
            al(&[Explicit, Implicit]),
            al(&[Proactive, Reactive]),
            fx(&[Relative]),
            fx(&[Feature]),
            fx(&[Hypothetical]),
            fx(&[Step]),
            al(&[Binary, Discrete]),
            fx(&[Augmenting]),
        ),
        FeedbackType::Gaze => profile(
            fx(&[NoIntent]),
            fx(&[Implicit]),
            fx(&[Reactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Actual]),
            al(&[Segment, Episode]),
            fx(&[Discrete]),
            fx(&[Augmenting]),
        ),
        FeedbackType::Reaction => profile(
            fx(&[NoIntent]),
            fx(&[Implicit]),
            fx(&[Proactive]),
            fx(&[Absolute]),
            fx(&[Instance]),
            fx(&[Actual]),
            al(&[Segment, Episode]),
            fx(&[Discrete]),
            fx(&[Augmenting]),
        ),
    }
}
