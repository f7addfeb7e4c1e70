//! Line-oriented text codec for feedback instances.
//!
//! One instance per line, eight tab-separated fields:
//!
//! ```text
//! version  instance_id  source_id  timestamp  profile  targets  value  context
//! ```
//!
//! * `version` is the single character `1`.
//! * `source_id` escapes `%`, tab, CR and LF as `%25`, `%09`, `%0D`, `%0A`.
//! * `profile` is `D1=<sel>;...;D9=<sel>` where `<sel>` lists attributes as
//!   `Label!` (fixed) or `Label?` (allowed), comma-separated.
//! * `targets` is a `;`-separated list of
//!   `sa:<x>,<y>,<action>[,h]`, `seg:<episode>,<start>,<end>[,h]`,
//!   `ep:<episode>`, `feat:<i>|<j>...[@<x>,<y>|<x>,<y>...]` or `beh:<snapshot>`;
//!   a trailing `h` marks a human-authored target.
//! * `value` is `bin:+1`, `bin:-1`, `disc:<level>/<levels>`, `cont:<f64>`,
//!   `inst:<f64>`, or `rel:<group>><group>...` with groups of target
//!   indices joined by `=` (ties).
//! * `context` is six comma-separated `f64`s.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! decoding an encoded instance reproduces it exactly.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::gridworld::{Action, Cell, EpisodeId};

use super::{
    ContextEncoding, DimensionProfile, FeedbackInstance, FeedbackValue, Polarity, Ranking, Target,
    CONTEXT_DIM,
};

pub const FORMAT_VERSION: &str = "1";

const FIELDS: [&str; 8] = [
    "version",
    "instance_id",
    "source_id",
    "timestamp",
    "profile",
    "targets",
    "value",
    "context",
];

pub fn encode_instance(inst: &FeedbackInstance) -> String {
    [
        FORMAT_VERSION.to_string(),
        inst.instance_id.to_string(),
        escape(&inst.source_id),
        inst.timestamp.to_string(),
        inst.profile.to_string(),
        encode_targets(&inst.targets),
        encode_value(&inst.value),
        encode_context(&inst.context),
    ]
    .join("\t")
}

pub fn decode_instance(record: &[u8]) -> Result<FeedbackInstance> {
    let text = std::str::from_utf8(record).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "record is not valid UTF-8".into(),
    })?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let mut fields = Vec::with_capacity(FIELDS.len());
    let mut offset = 0;
    for part in text.split('\t') {
        fields.push((offset, part));
        offset += part.len() + 1;
    }
    if fields.len() < FIELDS.len() {
        return Err(Error::Parse {
            offset: text.len(),
            message: format!(
                "record truncated: expected {} fields, found {} (missing `{}`)",
                FIELDS.len(),
                fields.len(),
                FIELDS[fields.len()]
            ),
        });
    }
    if fields.len() > FIELDS.len() {
        return Err(Error::Parse {
            offset: fields[FIELDS.len()].0,
            message: "unexpected trailing field".into(),
        });
    }
    let field = |i: usize| fields[i];
    let fail = |i: usize, message: String| Error::Parse {
        offset: fields[i].0,
        message: format!("field `{}`: {message}", FIELDS[i]),
    };

    if field(0).1 != FORMAT_VERSION {
        return Err(fail(0, format!("unsupported version `{}`", field(0).1)));
    }
    let instance_id = field(1).1.parse().map_err(|e| fail(1, format!("{e}")))?;
    let source_id = unescape(field(2).1).map_err(|m| fail(2, m))?;
    let timestamp = field(3).1.parse().map_err(|e| fail(3, format!("{e}")))?;
    let profile: DimensionProfile = field(4).1.parse().map_err(|m| fail(4, m))?;
    let targets = decode_targets(field(5).1).map_err(|m| fail(5, m))?;
    let value = decode_value(field(6).1).map_err(|m| fail(6, m))?;
    let context = decode_context(field(7).1).map_err(|m| fail(7, m))?;
    let inst = FeedbackInstance {
        instance_id,
        source_id,
        timestamp,
        profile,
        targets,
        value,
        context,
    };
    super::validate_instance(&inst).map_err(|v| Error::Parse {
        offset: 0,
        message: format!("invalid instance: {}", v.join("; ")),
    })?;
    Ok(inst)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '\t' => out.push_str("%09"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('%') {
        out.push_str(&rest[..i]);
        let code = rest.get(i + 1..i + 3).ok_or("truncated escape")?;
        out.push(match code {
            "25" => '%',
            "09" => '\t',
            "0A" => '\n',
            "0D" => '\r',
            other => return Err(format!("unknown escape `%{other}`")),
        });
        rest = &rest[i + 3..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn encode_target(t: &Target) -> String {
    let h = |flag: bool| if flag { ",h" } else { "" };
    match t {
        Target::StateAction {
            cell,
            action,
            hypothetical,
        } => format!(
            "sa:{},{},{}{}",
            cell.x,
            cell.y,
            action.name(),
            h(*hypothetical)
        ),
        Target::Segment {
            episode,
            start,
            end,
            hypothetical,
        } => format!("seg:{episode},{start},{end}{}", h(*hypothetical)),
        Target::Episode { episode } => format!("ep:{episode}"),
        Target::FeatureSet { features, mask } => {
            let mut s = format!("feat:{}", join(features.iter(), "|"));
            if let Some(mask) = mask {
                s.push('@');
                s.push_str(&join(mask.iter().map(|c| format!("{},{}", c.x, c.y)), "|"));
            }
            s
        }
        Target::WholeBehavior { snapshot } => format!("beh:{snapshot}"),
    }
}

fn encode_targets(targets: &[Target]) -> String {
    join(targets.iter().map(encode_target), ";")
}

fn join<T: ToString>(items: impl Iterator<Item = T>, sep: &str) -> String {
    items.map(|i| i.to_string()).collect::<Vec<_>>().join(sep)
}

fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

pub fn decode_target(s: &str) -> std::result::Result<Target, String> {
    let (tag, body) = s
        .split_once(':')
        .ok_or_else(|| format!("bad target `{s}`"))?;
    let parts: Vec<&str> = body.split(',').collect();
    let hyp = |rest: &[&str]| match rest {
        [] => Ok(false),
        ["h"] => Ok(true),
        _ => Err(format!("bad target flags in `{s}`")),
    };
    let target = match tag {
        "sa" if parts.len() >= 3 => Target::StateAction {
            cell: Cell::new(num(parts[0])?, num(parts[1])?),
            action: Action::from_name(parts[2])
                .ok_or_else(|| format!("unknown action `{}`", parts[2]))?,
            hypothetical: hyp(&parts[3..])?,
        },
        "seg" if parts.len() >= 3 => Target::Segment {
            episode: EpisodeId(num(parts[0])?),
            start: num(parts[1])?,
            end: num(parts[2])?,
            hypothetical: hyp(&parts[3..])?,
        },
        "ep" => Target::Episode {
            episode: EpisodeId(num(body)?),
        },
        "feat" => {
            let (idx, mask) = match body.split_once('@') {
                Some((i, m)) => (i, Some(m)),
                None => (body, None),
            };
            let features = idx
                .split('|')
                .map(num)
                .collect::<std::result::Result<BTreeSet<usize>, _>>()?;
            let mask = mask
                .map(|m| {
                    m.split('|')
                        .map(|c| {
                            let (x, y) =
                                c.split_once(',').ok_or_else(|| format!("bad cell `{c}`"))?;
                            Ok(Cell::new(num(x)?, num(y)?))
                        })
                        .collect::<std::result::Result<BTreeSet<Cell>, String>>()
                })
                .transpose()?;
            Target::FeatureSet { features, mask }
        }
        "beh" => Target::WholeBehavior {
            snapshot: num(body)?,
        },
        _ => return Err(format!("bad target `{s}`")),
    };
    target.validate().map_err(|e| e.to_string())?;
    Ok(target)
}

fn decode_targets(s: &str) -> std::result::Result<Vec<Target>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(decode_target).collect()
}

fn encode_value(v: &FeedbackValue) -> String {
    match v {
        FeedbackValue::Binary(Polarity::Positive) => "bin:+1".into(),
        FeedbackValue::Binary(Polarity::Negative) => "bin:-1".into(),
        FeedbackValue::Discrete { level, levels } => format!("disc:{level}/{levels}"),
        FeedbackValue::Continuous(x) => format!("cont:{x}"),
        FeedbackValue::Instruction(w) => format!("inst:{w}"),
        FeedbackValue::Relation(r) => {
            format!("rel:{}", join(r.0.iter().map(|g| join(g.iter(), "=")), ">"))
        }
    }
}

fn decode_value(s: &str) -> std::result::Result<FeedbackValue, String> {
    let (tag, body) = s
        .split_once(':')
        .ok_or_else(|| format!("bad value `{s}`"))?;
    Ok(match tag {
        "bin" => match body {
            "+1" => FeedbackValue::Binary(Polarity::Positive),
            "-1" => FeedbackValue::Binary(Polarity::Negative),
            _ => return Err(format!("bad binary value `{body}`")),
        },
        "disc" => {
            let (l, k) = body
                .split_once('/')
                .ok_or_else(|| format!("bad discrete value `{body}`"))?;
            FeedbackValue::Discrete {
                level: num(l)?,
                levels: num(k)?,
            }
        }
        "cont" => FeedbackValue::Continuous(num(body)?),
        "inst" => FeedbackValue::Instruction(num(body)?),
        "rel" => FeedbackValue::Relation(Ranking(
            body.split('>')
                .map(|g| g.split('=').map(num).collect())
                .collect::<std::result::Result<_, _>>()?,
        )),
        _ => return Err(format!("unknown value tag `{tag}`")),
    })
}

fn encode_context(c: &ContextEncoding) -> String {
    join(c.0.iter(), ",")
}

fn decode_context(s: &str) -> std::result::Result<ContextEncoding, String> {
    let values = s
        .split(',')
        .map(num)
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    let arr: [f64; CONTEXT_DIM] = values.try_into().map_err(|v: Vec<f64>| {
        format!("expected {CONTEXT_DIM} context entries, got {}", v.len())
    })?;
    Ok(ContextEncoding(arr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{classify, FeedbackType};

    fn sample() -> FeedbackInstance {
        FeedbackInstance::new(
            42,
            "oracle\t%0",
            17,
            classify(FeedbackType::BehaviorPref),
            vec![
                Target::segment(EpisodeId(1), 0..8).unwrap(),
                Target::segment(EpisodeId(2), 8..12).unwrap(),
            ],
            FeedbackValue::Relation(Ranking::prefer(1, 0)),
            ContextEncoding([0.1, 1.0 / 3.0, 0.5, -1.0, 0.0, 0.3125]),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let inst = sample();
        let line = encode_instance(&inst);
        assert_eq!(decode_instance(line.as_bytes()).unwrap(), inst);
    }

    #[test]
    fn truncated_record_is_a_parse_error() {
        let line = encode_instance(&sample());
        let cut = &line[..line.find("seg:").unwrap()];
        assert!(matches!(
            decode_instance(cut.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_attribute_names_the_field() {
        let line = encode_instance(&sample()).replace("Relative!", "Sideways!");
        match decode_instance(line.as_bytes()) {
            Err(Error::Parse { offset, message }) => {
                assert!(message.contains("profile"), "{message}");
                assert!(message.contains("Sideways"), "{message}");
                assert_eq!(&line[offset..offset + 3], "D1=");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn feature_target_with_mask() {
        let t = Target::FeatureSet {
            features: [4, 5].into(),
            mask: Some([Cell::new(3, 1), Cell::new(3, 2)].into()),
        };
        assert_eq!(decode_target(&encode_target(&t)).unwrap(), t);
    }
}
