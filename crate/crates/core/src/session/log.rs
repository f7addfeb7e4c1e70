//! Append-only session log.
//!
//! The first line is `hfrl-session-log<TAB><version>`. Every further line is
//! `<seq><TAB><kind><TAB><payload>` with strictly increasing `seq`.
//! Instance payloads are `<proactive|reactive><TAB><codec record>`; all
//! other payloads are single-line JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SessionConfig;
use crate::error::{Error, Result};
use crate::feedback::codec::{decode_instance, encode_instance};
use crate::feedback::{FeedbackInstance, FeedbackState, InteractionKind, Measurement};
use crate::gridworld::{ActionTable, Episode};
use crate::metrics::MetricsSnapshot;
use crate::query::Query;
use crate::reward::Ensemble;

pub const LOG_MAGIC: &str = "hfrl-session-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub round: usize,
    pub kind: InteractionKind,
    pub proactive: bool,
    /// Which annotator answered, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    pub state: FeedbackState,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub round: usize,
    pub query: Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonEngagement {
    pub round: usize,
    pub query_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub round: usize,
    pub fit_seed: u64,
    /// Instances in the dataset the checkpoint was fitted on.
    pub instances: usize,
    /// Episodes in the store at fitting time.
    pub episodes: usize,
    pub final_loss: Option<f64>,
    pub ensemble: Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub round: usize,
    pub seed: u64,
    pub policy: ActionTable,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Record {
    Config(Box<SessionConfig>),
    Round(usize),
    Episode(Episode),
    Query(QueryRecord),
    Measurement(Box<MeasurementRecord>),
    Instance {
        proactive: bool,
        instance: FeedbackInstance,
    },
    NonEngagement(NonEngagement),
    Checkpoint(Box<CheckpointRecord>),
    Agent(AgentRecord),
    Metrics(MetricsSnapshot),
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::Config(_) => "config",
            Record::Round(_) => "round",
            Record::Episode(_) => "episode",
            Record::Query(_) => "query",
            Record::Measurement(_) => "measurement",
            Record::Instance { .. } => "instance",
            Record::NonEngagement(_) => "non_engagement",
            Record::Checkpoint(_) => "checkpoint",
            Record::Agent(_) => "agent",
            Record::Metrics(_) => "metrics",
        }
    }

    fn payload(&self) -> String {
        match self {
            Record::Config(c) => json(c.as_ref()),
            Record::Round(r) => r.to_string(),
            Record::Episode(e) => json(e),
            Record::Query(q) => json(q),
            Record::Measurement(m) => json(m.as_ref()),
            Record::Instance {
                proactive,
                instance,
            } => format!("{}\t{}", tag(*proactive), encode_instance(instance)),
            Record::NonEngagement(n) => json(n),
            Record::Checkpoint(c) => json(c.as_ref()),
            Record::Agent(a) => json(a),
            Record::Metrics(m) => json(m),
        }
    }

    fn parse(seq: u64, kind: &str, payload: &str) -> Result<Record> {
        let bad = |message: String| Error::Record { seq, message };
        fn from<T: serde::de::DeserializeOwned>(p: &str) -> std::result::Result<T, String> {
            serde_json::from_str(p).map_err(|e| e.to_string())
        }
        Ok(match kind {
            "config" => Record::Config(Box::new(from(payload).map_err(bad)?)),
            "round" => Record::Round(
                payload
                    .parse()
                    .map_err(|_| bad(format!("bad round `{payload}`")))?,
            ),
            "episode" => Record::Episode(from(payload).map_err(bad)?),
            "query" => Record::Query(from(payload).map_err(bad)?),
            "measurement" => Record::Measurement(Box::new(from(payload).map_err(bad)?)),
            "instance" => {
                let (tag, rest) = payload
                    .split_once('\t')
                    .ok_or_else(|| bad("instance record lacks a source tag".into()))?;
                let proactive = match tag {
                    "proactive" => true,
                    "reactive" => false,
                    other => return Err(bad(format!("unknown source tag `{other}`"))),
                };
                let instance = decode_instance(rest.as_bytes()).map_err(|e| bad(e.to_string()))?;
                Record::Instance {
                    proactive,
                    instance,
                }
            }
            "non_engagement" => Record::NonEngagement(from(payload).map_err(bad)?),
            "checkpoint" => Record::Checkpoint(Box::new(from(payload).map_err(bad)?)),
            "agent" => Record::Agent(from(payload).map_err(bad)?),
            "metrics" => Record::Metrics(from(payload).map_err(bad)?),
            other => return Err(bad(format!("unknown record kind `{other}`"))),
        })
    }
}

fn tag(proactive: bool) -> &'static str {
    if proactive {
        "proactive"
    } else {
        "reactive"
    }
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("log payload serializes")
}

/// Records in memory, optionally mirrored line by line to a file.
#[derive(Debug, Default)]
pub struct SessionLog {
    pub records: Vec<(u64, Record)>,
    sink: Option<BufWriter<File>>,
}

impl PartialEq for SessionLog {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl SessionLog {
    pub fn new() -> Self {
        SessionLog::default()
    }

    /// Mirrors records to `path`, truncating it.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut sink = BufWriter::new(File::create(path)?);
        writeln!(sink, "{LOG_MAGIC}\t{LOG_VERSION}")?;
        sink.flush()?;
        Ok(SessionLog {
            records: Vec::new(),
            sink: Some(sink),
        })
    }

    pub fn append(&mut self, record: Record) -> Result<u64> {
        let seq = self.records.last().map_or(0, |(s, _)| s + 1);
        if let Some(sink) = &mut self.sink {
            writeln!(sink, "{seq}\t{}\t{}", record.kind(), record.payload())?;
            sink.flush()?;
        }
        self.records.push((seq, record));
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &Record> {
        self.records.iter().map(|(_, r)| r)
    }

    pub fn config(&self) -> Option<&SessionConfig> {
        self.iter().find_map(|r| match r {
            Record::Config(c) => Some(c.as_ref()),
            _ => None,
        })
    }

    pub fn instances(&self) -> Vec<FeedbackInstance> {
        self.iter()
            .filter_map(|r| match r {
                Record::Instance { instance, .. } => Some(instance.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn last_checkpoint(&self) -> Option<&CheckpointRecord> {
        self.iter().rev().find_map(|r| match r {
            Record::Checkpoint(c) => Some(c.as_ref()),
            _ => None,
        })
    }

    pub fn metrics(&self) -> Vec<MetricsSnapshot> {
        self.iter()
            .filter_map(|r| match r {
                Record::Metrics(m) => Some(m.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{LOG_MAGIC}\t{LOG_VERSION}")?;
        for (seq, r) in &self.records {
            writeln!(out, "{seq}\t{}\t{}", r.kind(), r.payload())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("log is UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SessionLog::read(File::open(path)?)
    }

    /// Parses a log. A final line without a newline is an interrupted write
    /// and is dropped with a warning.
    pub fn read(input: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim_end_matches('\n');
        match header.split_once('\t') {
            Some((LOG_MAGIC, v)) if v == LOG_VERSION.to_string() => {}
            Some((LOG_MAGIC, v)) => {
                return Err(Error::Record {
                    seq: 0,
                    message: format!("unsupported log version {v}"),
                })
            }
            _ if header.is_empty() => return Ok(SessionLog::new()),
            _ => {
                return Err(Error::Record {
                    seq: 0,
                    message: "missing log header".into(),
                })
            }
        }
        let mut log = SessionLog::new();
        let mut line = String::new();
        let mut prev: Option<u64> = None;
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            let complete = line.ends_with('\n');
            let text = line.trim_end_matches('\n');
            let parsed = parse_line(text, prev);
            match parsed {
                Ok((seq, record)) => {
                    prev = Some(seq);
                    log.records.push((seq, record));
                }
                Err(e) if !complete => {
                    log::warn!("dropping interrupted final log line: {e}");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(log)
    }
}

fn parse_line(text: &str, prev: Option<u64>) -> Result<(u64, Record)> {
    let expected = prev.map_or(0, |p| p + 1);
    let mut parts = text.splitn(3, '\t');
    let seq_text = parts.next().unwrap_or_default();
    let seq: u64 = seq_text.parse().map_err(|_| Error::Record {
        seq: expected,
        message: format!("bad sequence number `{seq_text}`"),
    })?;
    if prev.is_some_and(|p| seq <= p) {
        return Err(Error::Record {
            seq,
            message: format!("sequence number not increasing after {}", prev.unwrap_or(0)),
        });
    }
    let (Some(kind), Some(payload)) = (parts.next(), parts.next()) else {
        return Err(Error::Record {
            seq,
            message: "record needs kind and payload fields".into(),
        });
    };
    Ok((seq, Record::parse(seq, kind, payload)?))
}
