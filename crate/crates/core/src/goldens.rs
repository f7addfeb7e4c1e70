//! Regenerable fixture files: the classification table, one worked
//! translation per interaction kind, and a default session config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::annotator::{Oracle, OracleConfig};
use crate::error::Result;
use crate::feedback::codec::encode_instance;
use crate::feedback::{classify, FeedbackState, FeedbackType, InteractionKind, Target};
use crate::gridworld::{replay_actions, reset, Action, EpisodeId, EpisodeOrigin, GridSpec};
use crate::query::Query;
use crate::session::SessionConfig;
use crate::store::EpisodeStore;
use crate::translator::{Lexicon, Translator, TranslatorParams};

pub const TABLE_FILE: &str = "feedback_types.tsv";
pub const TRANSLATIONS_FILE: &str = "translations.tsv";
pub const CONFIG_FILE: &str = "session.toml";

/// The dimension table in fixture format.
pub fn classification_table() -> String {
    let mut out = String::from(
        "# Feedback type classification.\n\
         # '!' = fixed attribute (black check), '?' = allowed attribute (grey check).\n\
         type\tD1\tD2\tD3\tD4\tD5\tD6\tD7\tD8\tD9\n",
    );
    for t in FeedbackType::ALL {
        writeln!(out, "{}\t{}", t.name(), classify(t).fields().join("\t"))
            .expect("writing to a string");
    }
    out
}

/// Rows of `(type name, nine fields)` from a table, skipping comments and
/// the header.
pub fn parse_table(text: &str) -> Vec<(String, Vec<String>)> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty() && !l.starts_with("type\t"))
        .map(|l| {
            let mut cols = l.split('\t').map(str::to_string);
            let name = cols.next().unwrap_or_default();
            (name, cols.collect())
        })
        .collect()
}

fn canonical_store(spec: &GridSpec) -> Result<EpisodeStore> {
    let mut actions = vec![Action::Right; 4];
    actions.extend([Action::Down; 4]);
    let mut ep = replay_actions(spec, reset(spec, 0)?, &actions, EpisodeId(0))?;
    ep.origin = EpisodeOrigin::Rollout;
    let mut store = EpisodeStore::new(spec.clone());
    store.insert(ep)?;
    Ok(store)
}

fn canonical_query(kind: InteractionKind, spec: &GridSpec) -> Result<Query> {
    let seg = |a: usize, b: usize| Target::segment(EpisodeId(0), a..b);
    let targets = match kind {
        InteractionKind::PairwiseChoice => vec![seg(0, 4)?, seg(4, 8)?],
        InteractionKind::RankingList => vec![seg(0, 2)?, seg(2, 4)?, seg(4, 6)?],
        InteractionKind::ActionAdvice => vec![Target::state_action(spec.start_cell, Action::Right)],
        InteractionKind::FeatureBrush => vec![Target::features([4])?],
        InteractionKind::MetaAnswer => Vec::new(),
        _ => vec![seg(0, 4)?],
    };
    let mut q = Query::new(0, kind, targets);
    if kind == InteractionKind::RatingSlider {
        q.levels = Some(5);
    }
    Ok(q)
}

/// One tab-separated row per interaction kind: kind, the simulated
/// measurement as JSON, and the translated instance record (`-` if none).
pub fn translation_examples() -> Result<String> {
    let spec = GridSpec::default();
    let mut store = canonical_store(&spec)?;
    let mut oracle = Oracle::new(
        OracleConfig {
            deterministic: true,
            ..OracleConfig::rational(0)
        },
        &spec,
    )?;
    let translator = Translator::new(TranslatorParams::default(), Lexicon::default());
    let fs = FeedbackState::default();
    let mut out = String::from("kind\tmeasurement\tinstance\n");
    for kind in InteractionKind::ALL {
        let q = canonical_query(kind, &spec)?;
        let m = store.materialize(kind, &oracle.respond(&q, &store)?)?;
        let instance = translator
            .translate(&m, &fs, kind)?
            .instance
            .map(|i| encode_instance(&i))
            .unwrap_or_else(|| "-".into());
        let json = serde_json::to_string(&m).expect("measurement serializes");
        writeln!(out, "{}\t{json}\t{instance}", kind.name()).expect("writing to a string");
    }
    Ok(out)
}

/// Writes every fixture into `dir`, returning the paths written.
pub fn write_goldens(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (TABLE_FILE, classification_table()),
        (TRANSLATIONS_FILE, translation_examples()?),
        (CONFIG_FILE, SessionConfig::default().to_toml()),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
