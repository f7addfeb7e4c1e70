//! Session orchestration: rollouts, queries, feedback, fitting, agent updates.

pub mod log;
pub mod server;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::agent::{train_q, AgentConfig, RewardSource};
use crate::annotator::{Oracle, OracleConfig};
use crate::error::{Error, Result};
use crate::feedback::{
    ContextEncoding, FeedbackInstance, FeedbackState, HumanState, InteractionKind, Measurement,
    QueryMode, Target,
};
use crate::gridworld::{rollout, EpisodeId, GridSpec, Policy};
use crate::metrics::{ensemble_alignment, regret, MetricsSnapshot};
use crate::query::{
    merge_proactive, pair_key, propose_queries, schedule_type, segments, Query, QueryStrategy,
    ScheduleRules, WorkItem,
};
use crate::reward::{
    fit, Ensemble, EnsembleConfig, FitConfig, FitReport, LossWeights, PreparedBatch,
};
use crate::store::EpisodeStore;
use crate::translator::{Lexicon, Translator, TranslatorParams};

use self::log::{
    AgentRecord, CheckpointRecord, MeasurementRecord, NonEngagement, QueryRecord, Record,
    SessionLog,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulated,
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiConfig {
    pub enabled: bool,
    pub addr: String,
    /// How long published queries stay open.
    pub query_timeout_ms: u64,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            enabled: false,
            addr: "127.0.0.1:8765".into(),
            query_timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub rounds: usize,
    pub rollouts_per_round: usize,
    pub queries_per_round: usize,
    /// Exploration of the rollout policy after the first round; the first
    /// round is uniformly random.
    pub rollout_epsilon: f64,
    /// Emit proactive feedback from oracles with nonzero availability.
    pub proactive: bool,
    pub grid: GridSpec,
    pub oracles: Vec<OracleConfig>,
    pub strategy: QueryStrategy,
    pub schedule: ScheduleRules,
    /// Discrete levels of rating-slider queries; continuous when absent.
    pub rating_levels: Option<u32>,
    pub ensemble: EnsembleConfig,
    pub loss: LossWeights,
    pub fit: FitConfig,
    pub agent: AgentConfig,
    pub translator: TranslatorParams,
    pub human: HumanState,
    pub fatigue_per_query: f64,
    pub api: ApiConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            name: "session".into(),
            seed: 0,
            mode: Mode::Simulated,
            rounds: 5,
            rollouts_per_round: 10,
            queries_per_round: 20,
            rollout_epsilon: 0.3,
            proactive: false,
            grid: GridSpec::default(),
            oracles: vec![OracleConfig::rational(0)],
            strategy: QueryStrategy::default(),
            schedule: ScheduleRules::fixed(InteractionKind::PairwiseChoice),
            rating_levels: None,
            ensemble: EnsembleConfig::default(),
            loss: LossWeights::default(),
            fit: FitConfig::default(),
            agent: AgentConfig::default(),
            translator: TranslatorParams::default(),
            human: FeedbackState::default().human,
            fatigue_per_query: 0.0,
            api: ApiConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        match self.mode {
            Mode::Simulated if self.oracles.is_empty() => {
                return Err(Error::Config(
                    "simulated mode needs at least one oracle".into(),
                ))
            }
            Mode::Interactive if !self.api.enabled => {
                return Err(Error::Config(
                    "interactive mode needs the API enabled".into(),
                ))
            }
            _ => {}
        }
        for o in &self.oracles {
            o.validate()?;
        }
        self.strategy().validate()?;
        self.loss.validate()?;
        self.agent.validate()?;
        if self.ensemble.size == 0 {
            return Err(Error::Config("ensemble size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rollout_epsilon) {
            return Err(Error::Config("rollout_epsilon must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SessionConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SessionConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Query strategy with `k` set to the per-round query budget.
    pub fn strategy(&self) -> QueryStrategy {
        let k = self.queries_per_round.max(1);
        QueryStrategy {
            k,
            pool_size: self.strategy.pool_size.max(k),
            ..self.strategy
        }
    }

    fn translator(&self) -> Translator {
        Translator::new(self.translator.clone(), Lexicon::default())
    }

    fn initial_state(&self) -> FeedbackState {
        FeedbackState {
            human: self.human,
            ..FeedbackState::default()
        }
    }
}

/// Independent seed for a (purpose, round, index) triple.
pub fn derive_seed(seed: u64, purpose: u64, round: usize, index: usize) -> u64 {
    let mut z = seed
        ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (round as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (index as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SEED_ROLLOUT: u64 = 1;
const SEED_QUERY: u64 = 2;
const SEED_FIT: u64 = 3;
const SEED_AGENT: u64 = 4;

/// One answer or unprompted report.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub kind: InteractionKind,
    pub measurement: Measurement,
    pub annotator: Option<String>,
}

/// Source of feedback for a session.
pub trait Acquirer {
    /// Unprompted feedback available at the start of the feedback phase.
    fn proactive(
        &mut self,
        round: usize,
        store: &EpisodeStore,
        new: &[EpisodeId],
    ) -> Result<Vec<Submission>>;

    /// One entry per query, `None` when the query went unanswered.
    fn answer(
        &mut self,
        round: usize,
        queries: &[Query],
        store: &EpisodeStore,
    ) -> Result<Vec<Option<Submission>>>;
}

/// Oracles answering in rotation by query id.
pub struct SimulatedAcquirer {
    pub oracles: Vec<Oracle>,
    pub proactive: bool,
}

impl SimulatedAcquirer {
    pub fn new(cfg: &SessionConfig) -> Result<Self> {
        Ok(SimulatedAcquirer {
            oracles: cfg
                .oracles
                .iter()
                .map(|o| Oracle::new(o.clone(), &cfg.grid))
                .collect::<Result<_>>()?,
            proactive: cfg.proactive,
        })
    }
}

impl Acquirer for SimulatedAcquirer {
    fn proactive(
        &mut self,
        _round: usize,
        store: &EpisodeStore,
        new: &[EpisodeId],
    ) -> Result<Vec<Submission>> {
        let mut out = Vec::new();
        if !self.proactive {
            return Ok(out);
        }
        for oracle in &mut self.oracles {
            for id in new {
                for m in oracle.proactive_emit(store.get(*id)?) {
                    out.push(Submission {
                        kind: InteractionKind::CritiqueButton,
                        measurement: m,
                        annotator: Some(oracle.cfg.name.clone()),
                    });
                }
            }
        }
        Ok(out)
    }

    fn answer(
        &mut self,
        _round: usize,
        queries: &[Query],
        store: &EpisodeStore,
    ) -> Result<Vec<Option<Submission>>> {
        let n = self.oracles.len();
        queries
            .iter()
            .map(|q| {
                let oracle = &mut self.oracles[q.query_id as usize % n];
                Ok(Some(Submission {
                    kind: q.kind,
                    measurement: oracle.respond(q, store)?,
                    annotator: Some(oracle.cfg.name.clone()),
                }))
            })
            .collect()
    }
}

/// Read-only snapshot of a running session, shared with the wire API.
#[derive(Debug, Clone, Default)]
pub struct SessionView {
    pub name: String,
    pub round: usize,
    pub finished: bool,
    pub store: EpisodeStore,
    pub ensemble: Option<Ensemble>,
    pub metrics: Vec<MetricsSnapshot>,
    pub loss_trace: Vec<f64>,
    pub pending: Vec<Query>,
    /// Episodes that appeared in a published query.
    pub queried: BTreeSet<EpisodeId>,
    pub instances: usize,
    pub fs: FeedbackState,
}

impl SessionView {
    pub fn model_version(&self) -> u64 {
        self.ensemble.as_ref().map_or(0, |e| e.version)
    }
}

pub type SharedView = Arc<Mutex<SessionView>>;

/// Splits a proposed pair query into the queries its interaction kind needs.
fn shape_queries(
    proposed: &Query,
    kind: InteractionKind,
    levels: Option<u32>,
    store: &EpisodeStore,
) -> Vec<Query> {
    let with = |targets: Vec<Target>| Query {
        kind,
        levels: if kind == InteractionKind::RatingSlider {
            levels
        } else {
            None
        },
        ..Query::new(0, kind, targets)
    };
    match kind {
        InteractionKind::PairwiseChoice | InteractionKind::RankingList => {
            vec![with(proposed.targets.clone())]
        }
        InteractionKind::CritiqueButton
        | InteractionKind::RatingSlider
        | InteractionKind::VerbalComment
        | InteractionKind::ReactionSignal => proposed
            .targets
            .iter()
            .map(|t| with(vec![t.clone()]))
            .collect(),
        InteractionKind::Demonstration | InteractionKind::SegmentCorrection => proposed
            .targets
            .first()
            .map(|t| with(vec![t.clone()]))
            .into_iter()
            .collect(),
        InteractionKind::ActionAdvice => proposed
            .targets
            .first()
            .and_then(|t| match t {
                Target::Segment { episode, start, .. } => store.get(*episode).ok().and_then(|e| {
                    let tr = e.transitions.get(*start)?;
                    Some(with(vec![Target::state_action(
                        tr.state.agent_cell,
                        tr.action,
                    )]))
                }),
                _ => None,
            })
            .into_iter()
            .collect(),
        InteractionKind::FeatureBrush => proposed
            .targets
            .iter()
            .filter(|t| matches!(t, Target::FeatureSet { .. }))
            .map(|t| with(vec![t.clone()]))
            .collect(),
        InteractionKind::MetaAnswer => Vec::new(),
    }
}

/// Mutable state of a running or replayed session.
pub struct Session {
    pub cfg: SessionConfig,
    pub log: SessionLog,
    pub store: EpisodeStore,
    pub ensemble: Ensemble,
    pub instances: Vec<FeedbackInstance>,
    pub fs: FeedbackState,
    pub last_fit: Option<FitReport>,
    translator: Translator,
    policy: Option<Policy>,
    asked: BTreeSet<(Target, Target)>,
    next_query: u64,
    next_instance: u64,
    clock: u64,
    view: Option<SharedView>,
}

impl Session {
    pub fn new(cfg: SessionConfig, log: SessionLog) -> Result<Self> {
        cfg.validate()?;
        let ensemble = Ensemble::new(&cfg.ensemble, cfg.seed)?;
        Ok(Session {
            store: EpisodeStore::new(cfg.grid.clone()),
            translator: cfg.translator(),
            fs: cfg.initial_state(),
            ensemble,
            instances: Vec::new(),
            last_fit: None,
            policy: None,
            asked: BTreeSet::new(),
            next_query: 0,
            next_instance: 0,
            clock: 0,
            view: None,
            log,
            cfg,
        })
    }

    pub fn with_view(mut self, view: SharedView) -> Self {
        self.view = Some(view);
        self
    }

    fn publish(&self, round: usize, pending: Vec<Query>, finished: bool) {
        if let Some(view) = &self.view {
            let mut v = view.lock().expect("view lock");
            v.name = self.cfg.name.clone();
            v.round = round;
            v.finished = finished;
            v.store = self.store.clone();
            v.ensemble = Some(self.ensemble.clone());
            v.metrics = self.log.metrics();
            v.loss_trace = self
                .last_fit
                .as_ref()
                .map(|f| mean_trace(f, self.ensemble.members.len()))
                .unwrap_or_default();
            v.queried.extend(
                pending
                    .iter()
                    .flat_map(|q| q.targets.iter().filter_map(Target::episode_id)),
            );
            v.pending = pending;
            v.instances = self.instances.len();
            v.fs = self.fs.clone();
        }
    }

    /// Runs every configured round.
    pub fn run(mut self, acquirer: &mut dyn Acquirer) -> Result<SessionLog> {
        self.log
            .append(Record::Config(Box::new(self.cfg.clone())))?;
        self.publish(0, Vec::new(), false);
        for round in 0..self.cfg.rounds {
            self.round(round, acquirer).map_err(|e| Error::Round {
                round,
                source: Box::new(e),
            })?;
        }
        self.publish(self.cfg.rounds, Vec::new(), true);
        Ok(self.log)
    }

    fn round(&mut self, round: usize, acquirer: &mut dyn Acquirer) -> Result<()> {
        self.log.append(Record::Round(round))?;
        let cfg = self.cfg.clone();

        let policy = self.policy.clone().unwrap_or(Policy::Uniform);
        let mut new = Vec::with_capacity(cfg.rollouts_per_round);
        for i in 0..cfg.rollouts_per_round {
            let id = self.store.next_id();
            let seed = derive_seed(cfg.seed, SEED_ROLLOUT, round, i);
            let mut ep = rollout(&cfg.grid, &policy, id, seed, cfg.grid.max_steps)?;
            ep.snapshot = round as u64;
            self.store.insert(ep.clone())?;
            self.log.append(Record::Episode(ep))?;
            new.push(id);
        }

        let proactive = acquirer.proactive(round, &self.store, &new)?;
        let buffer: Vec<EpisodeId> = self
            .store
            .rollouts()
            .filter(|e| !e.is_empty())
            .map(|e| e.episode_id)
            .collect();
        let mut queries = Vec::new();
        if !buffer.is_empty() && cfg.queries_per_round > 0 {
            let seed = derive_seed(cfg.seed, SEED_QUERY, round, 0);
            let proposed = propose_queries(
                &self.store,
                &buffer,
                &self.ensemble,
                &cfg.strategy(),
                seed,
                &self.asked,
            )?;
            for p in proposed {
                if let [a, b] = p.targets.as_slice() {
                    self.asked.insert(pair_key(a, b));
                }
                let kind = schedule_type(&p, &self.fs, &cfg.schedule);
                for mut q in shape_queries(&p, kind, cfg.rating_levels, &self.store) {
                    q.query_id = self.next_query;
                    q.score = p.score;
                    self.next_query += 1;
                    queries.push(q);
                }
            }
        }
        let work = merge_proactive(
            queries,
            proactive.iter().map(|s| s.measurement.clone()).collect(),
        );
        let mut proactive = proactive.into_iter();
        let mut reactive = Vec::new();
        for item in work {
            match item {
                WorkItem::Proactive(_) => {
                    let s = proactive.next().expect("merge keeps proactive order");
                    self.ingest(round, s, true)?;
                }
                WorkItem::Reactive(q) => {
                    self.log.append(Record::Query(QueryRecord {
                        round,
                        query: q.clone(),
                    }))?;
                    reactive.push(q);
                }
            }
        }
        self.publish(round, reactive.clone(), false);
        let answers = acquirer.answer(round, &reactive, &self.store)?;
        for (q, a) in reactive.iter().zip(answers) {
            match a {
                Some(s) => self.ingest(round, s, false)?,
                None => {
                    self.log.append(Record::NonEngagement(NonEngagement {
                        round,
                        query_id: q.query_id,
                    }))?;
                }
            }
        }

        if !self.instances.is_empty() {
            let fit_seed = derive_seed(cfg.seed, SEED_FIT, round, 0);
            let (ensemble, report) =
                fit_round(&self.ensemble, &self.store, &self.instances, &cfg, fit_seed)?;
            let final_loss = final_loss(&report, ensemble.members.len());
            self.ensemble = ensemble;
            self.last_fit = Some(report);
            self.fs.agent.model_version = self.ensemble.version;
            self.log
                .append(Record::Checkpoint(Box::new(CheckpointRecord {
                    round,
                    fit_seed,
                    instances: self.instances.len(),
                    episodes: self.store.len(),
                    final_loss,
                    ensemble: self.ensemble.clone(),
                })))?;
        }

        let mut regret_value = None;
        if cfg.agent.episodes > 0 {
            let seed = derive_seed(cfg.seed, SEED_AGENT, round, 0);
            let agent_cfg = AgentConfig { seed, ..cfg.agent };
            let agent = train_q(
                &cfg.grid,
                RewardSource::EnsembleMean(&self.ensemble),
                &agent_cfg,
            )?;
            regret_value = Some(regret(&agent.greedy(), &cfg.grid, cfg.agent.gamma)?);
            self.policy = Some(Policy::EpsilonGreedy {
                table: agent.policy.clone(),
                epsilon: cfg.rollout_epsilon,
            });
            self.log.append(Record::Agent(AgentRecord {
                round,
                seed,
                policy: agent.policy,
            }))?;
        }

        let uncertainty = self.mean_uncertainty(&buffer)?;
        self.fs.agent.mean_uncertainty = uncertainty;
        let snapshot = MetricsSnapshot {
            round,
            model_version: self.ensemble.version,
            instances: self.instances.len(),
            alignment: ensemble_alignment(&cfg.grid, &self.ensemble)?.rho,
            regret: regret_value,
            mean_uncertainty: uncertainty,
            final_loss: self
                .last_fit
                .as_ref()
                .and_then(|f| final_loss(f, self.ensemble.members.len())),
        };
        self.log.append(Record::Metrics(snapshot))?;
        self.publish(round, Vec::new(), false);
        Ok(())
    }

    fn mean_uncertainty(&self, buffer: &[EpisodeId]) -> Result<f64> {
        let ctx = ContextEncoding::default();
        let mut u = Vec::new();
        for id in buffer {
            for s in segments(&self.store, *id, self.cfg.strategy.segment_len)? {
                u.push(self.ensemble.uncertainty(&self.store, &s, &ctx)?);
            }
        }
        Ok(if u.is_empty() {
            0.0
        } else {
            crate::reward::mean(&u)
        })
    }

    /// Materializes, logs and translates one submission.
    fn ingest(&mut self, round: usize, s: Submission, proactive: bool) -> Result<()> {
        let before = self.store.next_id();
        let mut m = self.store.materialize(s.kind, &s.measurement)?;
        if self.store.next_id() != before {
            self.log
                .append(Record::Episode(self.store.get(before)?.clone()))?;
        }
        self.clock += 1;
        if m.timestamp == 0 {
            m.timestamp = self.clock;
        }
        let mut state = self.fs.clone();
        state.interface.mode = if proactive {
            QueryMode::Proactive
        } else {
            QueryMode::Reactive
        };
        let translation = self.translator.translate(&m, &state, s.kind)?;
        self.log
            .append(Record::Measurement(Box::new(MeasurementRecord {
                round,
                kind: s.kind,
                proactive,
                annotator: s.annotator,
                state,
                measurement: m,
            })))?;
        if let Some(mut instance) = translation.instance {
            instance.instance_id = self.next_instance;
            self.next_instance += 1;
            self.log.append(Record::Instance {
                proactive,
                instance: instance.clone(),
            })?;
            self.instances.push(instance);
        }
        self.fs.human.fatigue = (self.fs.human.fatigue + self.cfg.fatigue_per_query).min(1.0);
        Ok(())
    }
}

fn fit_round(
    ensemble: &Ensemble,
    store: &EpisodeStore,
    instances: &[FeedbackInstance],
    cfg: &SessionConfig,
    fit_seed: u64,
) -> Result<(Ensemble, FitReport)> {
    let batch = PreparedBatch::prepare(store, instances)?;
    let fit_cfg = FitConfig {
        seed: fit_seed,
        ..cfg.fit
    };
    fit(ensemble, &batch, &cfg.loss, &fit_cfg)
}

/// Mean over members of each epoch's loss.
pub fn mean_trace(report: &FitReport, members: usize) -> Vec<f64> {
    let per: Vec<Vec<f64>> = (0..members).map(|m| report.member_trace(m)).collect();
    let epochs = per.iter().map(Vec::len).min().unwrap_or(0);
    (0..epochs)
        .map(|e| per.iter().map(|t| t[e]).sum::<f64>() / members as f64)
        .collect()
}

fn final_loss(report: &FitReport, members: usize) -> Option<f64> {
    mean_trace(report, members).last().copied()
}

/// Runs a simulated session to completion.
pub fn run_session(cfg: &SessionConfig) -> Result<SessionLog> {
    run_session_into(cfg, SessionLog::new())
}

/// Like [`run_session`], appending to `log` (which may mirror to a file).
pub fn run_session_into(cfg: &SessionConfig, log: SessionLog) -> Result<SessionLog> {
    if cfg.mode != Mode::Simulated {
        return Err(Error::Config(
            "run_session drives simulated sessions; use serve".into(),
        ));
    }
    let mut acquirer = SimulatedAcquirer::new(cfg)?;
    Session::new(cfg.clone(), log)?.run(&mut acquirer)
}

/// What a replay reconstructs.
#[derive(Debug, Clone)]
pub struct Replay {
    pub config: SessionConfig,
    pub store: EpisodeStore,
    pub dataset: Vec<FeedbackInstance>,
    pub ensemble: Ensemble,
    /// Checkpoints re-derived and matched bit for bit.
    pub checkpoints_verified: usize,
}

/// Re-translates every logged measurement and refits every logged
/// checkpoint, checking both against the log.
///
/// A log without a config record replays against `fallback` (or the default
/// config) and yields its untouched initial ensemble.
pub fn replay(log: &SessionLog, fallback: Option<&SessionConfig>) -> Result<Replay> {
    let config = log
        .config()
        .cloned()
        .or_else(|| fallback.cloned())
        .unwrap_or_default();
    let translator = config.translator();
    let mut store = EpisodeStore::new(config.grid.clone());
    let mut ensemble = Ensemble::new(&config.ensemble, config.seed)?;
    let mut dataset: Vec<FeedbackInstance> = Vec::new();
    let mut pending: Option<(u64, FeedbackInstance)> = None;
    let mut verified = 0;
    for (seq, record) in &log.records {
        let seq = *seq;
        let integrity = |message: String| Error::Integrity(format!("record {seq}: {message}"));
        if let Some((mseq, _)) = &pending {
            if !matches!(record, Record::Instance { .. }) {
                return Err(integrity(format!(
                    "measurement {mseq} produced an instance that was not logged"
                )));
            }
        }
        match record {
            Record::Episode(ep) => {
                if ep.episode_id != store.next_id() {
                    return Err(integrity(format!(
                        "episode {} logged where episode {} was due",
                        ep.episode_id,
                        store.next_id()
                    )));
                }
                store
                    .insert(ep.clone())
                    .map_err(|e| integrity(e.to_string()))?
            }
            Record::Measurement(m) => {
                let t = translator
                    .translate(&m.measurement, &m.state, m.kind)
                    .map_err(|e| Error::Record {
                        seq,
                        message: e.to_string(),
                    })?;
                if let Some(inst) = t.instance {
                    pending = Some((seq, inst));
                }
            }
            Record::Instance { instance, .. } => {
                let Some((_, expected)) = pending.take() else {
                    return Err(integrity("instance without a preceding measurement".into()));
                };
                let renumbered = FeedbackInstance {
                    instance_id: instance.instance_id,
                    ..expected
                };
                if renumbered != *instance {
                    return Err(integrity(
                        "logged instance differs from its re-translation".into(),
                    ));
                }
                for t in &instance.targets {
                    if let Some(ep) = t.episode_id() {
                        if !store.contains(ep) {
                            return Err(integrity(format!(
                                "instance {} references missing episode {ep}",
                                instance.instance_id
                            )));
                        }
                    }
                    store.resolve(t).map_err(|e| integrity(e.to_string()))?;
                }
                dataset.push(instance.clone());
            }
            Record::Checkpoint(ck) => {
                if ck.instances != dataset.len() {
                    return Err(integrity(format!(
                        "checkpoint fitted on {} instances but {} were replayed",
                        ck.instances,
                        dataset.len()
                    )));
                }
                if ck.episodes != store.len() {
                    return Err(integrity(format!(
                        "checkpoint saw {} episodes but {} were replayed",
                        ck.episodes,
                        store.len()
                    )));
                }
                let (refit, _) = fit_round(&ensemble, &store, &dataset, &config, ck.fit_seed)?;
                if !refit.bit_equal(&ck.ensemble) || refit.version != ck.ensemble.version {
                    return Err(integrity(format!(
                        "refit of round {} does not reproduce the checkpoint",
                        ck.round
                    )));
                }
                ensemble = refit;
                verified += 1;
            }
            // Catches a dropped final checkpoint, which no later refit would notice.
            Record::Metrics(m)
                if m.model_version != ensemble.version || m.instances != dataset.len() =>
            {
                return Err(integrity(format!(
                    "round {} metrics report version {} on {} instances, replay reached {} on {}",
                    m.round,
                    m.model_version,
                    m.instances,
                    ensemble.version,
                    dataset.len()
                )));
            }
            _ => {}
        }
    }
    if let Some((mseq, _)) = pending {
        return Err(Error::Integrity(format!(
            "measurement {mseq} produced an instance that was not logged"
        )));
    }
    Ok(Replay {
        config,
        store,
        dataset,
        ensemble,
        checkpoints_verified: verified,
    })
}
