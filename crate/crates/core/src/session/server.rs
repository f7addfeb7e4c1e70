//! HTTP wire API for annotation clients.
//!
//! Every route lives under `/api/sessions` and answers JSON objects that
//! include the session's `model_version`:
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | GET | `/api/sessions` | names, rounds and versions |
//! | GET | `/api/sessions/{s}/queries` | open queries with grid frames |
//! | POST | `/api/sessions/{s}/queries/{id}` | body: a `Measurement`; empty targets mean the query's |
//! | POST | `/api/sessions/{s}/proactive` | body: `{"kind": .., "measurement": ..}` |
//! | GET | `/api/sessions/{s}/episodes?offset=&limit=` | episode summaries |
//! | GET | `/api/sessions/{s}/episodes/{id}` | frames and learned-reward trace |
//! | GET | `/api/sessions/{s}/metrics` | loss trace, alignment, uncertainty histogram |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    Acquirer, Mode, Session, SessionConfig, SessionLog, SessionView, SharedView, Submission,
};
use crate::error::{Error, Result};
use crate::feedback::codec::{encode_instance, encode_target};
use crate::feedback::{
    vars, ContextEncoding, FeedbackInstance, InteractionKind, Measurement, QueryMode, Target,
    Variable,
};
use crate::gridworld::{Cell, EpisodeId, GridSpec};
use crate::query::Query;
use crate::store::EpisodeStore;
use crate::translator::{Lexicon, Translator};

const HISTOGRAM_BINS: usize = 10;
const DEFAULT_PAGE: usize = 20;

#[derive(Default)]
struct HubState {
    open: BTreeMap<u64, Query>,
    answers: BTreeMap<u64, Submission>,
    proactive: Vec<Submission>,
}

/// Meeting point between a running interactive session and its clients.
///
/// The session publishes a round's queries and blocks until they are all
/// answered or the timeout passes; clients post measurements, which are
/// checked by a dry-run translation before they are queued.
pub struct Hub {
    timeout: Duration,
    translator: Translator,
    view: SharedView,
    state: Mutex<HubState>,
    changed: Condvar,
}

impl Hub {
    pub fn new(cfg: &SessionConfig, view: SharedView) -> Arc<Hub> {
        Arc::new(Hub {
            timeout: Duration::from_millis(cfg.api.query_timeout_ms),
            translator: Translator::new(cfg.translator.clone(), Lexicon::default()),
            view,
            state: Mutex::new(HubState::default()),
            changed: Condvar::new(),
        })
    }

    fn check(
        &self,
        kind: InteractionKind,
        m: &Measurement,
        proactive: bool,
    ) -> Result<Option<FeedbackInstance>> {
        let (mut store, mut fs) = {
            let v = self.view.lock().expect("view lock");
            (v.store.clone(), v.fs.clone())
        };
        fs.interface.mode = if proactive {
            QueryMode::Proactive
        } else {
            QueryMode::Reactive
        };
        let m = store.materialize(kind, m)?;
        for t in &m.targets {
            store.resolve(t)?;
        }
        Ok(self.translator.translate(&m, &fs, kind)?.instance)
    }

    /// Queues an answer to an open query; returns the instance it will yield.
    pub fn submit_answer(
        &self,
        query_id: u64,
        mut m: Measurement,
    ) -> Result<Option<FeedbackInstance>> {
        let query = {
            let st = self.state.lock().expect("hub lock");
            match st.open.get(&query_id) {
                None => return Err(Error::Lookup(format!("no open query {query_id}"))),
                Some(_) if st.answers.contains_key(&query_id) => {
                    return Err(Error::Usage(format!(
                        "query {query_id} is already answered"
                    )))
                }
                Some(q) => q.clone(),
            }
        };
        m.query_id = Some(query_id);
        // Answers may leave the shown targets implicit.
        let authored = matches!(
            query.kind,
            InteractionKind::Demonstration
                | InteractionKind::FeatureBrush
                | InteractionKind::MetaAnswer
        );
        if m.targets.is_empty() && !authored {
            m.targets = query.targets.clone();
            if query.kind == InteractionKind::SegmentCorrection {
                m.targets.truncate(1);
            }
        }
        let instance = self.check(query.kind, &m, false)?;
        let mut st = self.state.lock().expect("hub lock");
        if !st.open.contains_key(&query_id) {
            return Err(Error::Lookup(format!(
                "query {query_id} closed while validating"
            )));
        }
        st.answers.insert(
            query_id,
            Submission {
                kind: query.kind,
                annotator: annotator(&m),
                measurement: m,
            },
        );
        self.changed.notify_all();
        Ok(instance)
    }

    /// Queues unprompted feedback for the next feedback phase.
    pub fn submit_proactive(
        &self,
        kind: InteractionKind,
        mut m: Measurement,
    ) -> Result<Option<FeedbackInstance>> {
        m.query_id = None;
        let instance = self.check(kind, &m, true)?;
        self.state
            .lock()
            .expect("hub lock")
            .proactive
            .push(Submission {
                kind,
                annotator: annotator(&m),
                measurement: m,
            });
        Ok(instance)
    }

    pub fn open_queries(&self) -> Vec<Query> {
        self.state
            .lock()
            .expect("hub lock")
            .open
            .values()
            .cloned()
            .collect()
    }
}

fn annotator(m: &Measurement) -> Option<String> {
    match m.contextual.get(vars::ANNOTATOR_ID) {
        Some(Variable::Text(s)) => Some(s.clone()),
        _ => None,
    }
}

impl Acquirer for Arc<Hub> {
    fn proactive(
        &mut self,
        _round: usize,
        _store: &EpisodeStore,
        _new: &[EpisodeId],
    ) -> Result<Vec<Submission>> {
        Ok(std::mem::take(
            &mut self.state.lock().expect("hub lock").proactive,
        ))
    }

    fn answer(
        &mut self,
        _round: usize,
        queries: &[Query],
        _store: &EpisodeStore,
    ) -> Result<Vec<Option<Submission>>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        // All of a round's queries are published together and share one deadline.
        let deadline = Instant::now() + self.timeout;
        let mut st = self.state.lock().expect("hub lock");
        st.answers.clear();
        st.open = queries.iter().map(|q| (q.query_id, q.clone())).collect();
        while st.answers.len() < st.open.len() {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            st = self
                .changed
                .wait_timeout(st, deadline - now)
                .expect("hub lock")
                .0;
        }
        st.open.clear();
        let mut answers = std::mem::take(&mut st.answers);
        Ok(queries
            .iter()
            .map(|q| answers.remove(&q.query_id))
            .collect())
    }
}

#[derive(Clone)]
struct Endpoint {
    view: SharedView,
    hub: Option<Arc<Hub>>,
}

type Registry = Arc<Mutex<BTreeMap<String, Endpoint>>>;

/// The wire API, served from a background thread.
pub struct ApiServer {
    http: Arc<tiny_http::Server>,
    registry: Registry,
    worker: Option<JoinHandle<()>>,
}

impl ApiServer {
    /// Binds `addr`; port 0 picks a free port.
    pub fn start(addr: &str) -> Result<ApiServer> {
        let http = Arc::new(
            tiny_http::Server::http(addr)
                .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?,
        );
        let registry: Registry = Arc::default();
        let worker = {
            let http = Arc::clone(&http);
            let registry = Arc::clone(&registry);
            std::thread::spawn(move || {
                for mut request in http.incoming_requests() {
                    let mut body = String::new();
                    let (status, reply) = match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => route(&registry, request.method().as_str(), request.url(), &body),
                        Err(e) => (400, json!({ "error": e.to_string() })),
                    };
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                        .expect("static header");
                    let response = tiny_http::Response::from_string(reply.to_string())
                        .with_status_code(status)
                        .with_header(header);
                    if let Err(e) = request.respond(response) {
                        log::warn!("failed to answer client: {e}");
                    }
                }
            })
        };
        Ok(ApiServer {
            http,
            registry,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.http
            .server_addr()
            .to_ip()
            .expect("server listens on an IP socket")
    }

    /// Exposes a session; `hub` is absent for read-only sessions.
    pub fn register(&self, name: &str, view: SharedView, hub: Option<Arc<Hub>>) {
        self.registry
            .lock()
            .expect("registry lock")
            .insert(name.to_string(), Endpoint { view, hub });
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.http.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Runs an interactive session whose feedback arrives through `server`.
pub fn serve_session(
    cfg: &SessionConfig,
    log: SessionLog,
    server: &ApiServer,
) -> Result<SessionLog> {
    if cfg.mode != Mode::Interactive {
        return Err(Error::Config("serve needs an interactive config".into()));
    }
    let view: SharedView = Arc::default();
    let hub = Hub::new(cfg, Arc::clone(&view));
    server.register(&cfg.name, Arc::clone(&view), Some(Arc::clone(&hub)));
    let mut acquirer = hub;
    Session::new(cfg.clone(), log)?
        .with_view(view)
        .run(&mut acquirer)
}

/// Dispatches one request; returns the status code and JSON reply.
fn route(registry: &Registry, method: &str, url: &str, body: &str) -> (u16, Value) {
    let (path, query) = url.split_once('?').unwrap_or((url, ""));
    let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
    let endpoint = |name: &str| registry.lock().expect("registry lock").get(name).cloned();
    match (method, parts.as_slice()) {
        ("GET", ["api", "sessions"]) => {
            let sessions: Vec<Value> = registry
                .lock()
                .expect("registry lock")
                .iter()
                .map(|(name, e)| {
                    let v = e.view.lock().expect("view lock");
                    json!({
                        "name": name,
                        "round": v.round,
                        "finished": v.finished,
                        "interactive": e.hub.is_some(),
                        "model_version": v.model_version(),
                    })
                })
                .collect();
            (200, json!({ "sessions": sessions }))
        }
        (_, ["api", "sessions", name, rest @ ..]) => match endpoint(name) {
            None => (404, json!({ "error": format!("unknown session `{name}`") })),
            Some(e) => session_route(&e, method, rest, query, body),
        },
        _ => (
            404,
            json!({ "error": format!("no route for {method} {path}") }),
        ),
    }
}

fn session_route(
    e: &Endpoint,
    method: &str,
    rest: &[&str],
    query: &str,
    body: &str,
) -> (u16, Value) {
    let version = || e.view.lock().expect("view lock").model_version();
    let outcome: Result<Value> = match (method, rest) {
        ("GET", ["queries"]) => {
            let v = e.view.lock().expect("view lock");
            let open = e.hub.as_ref().map(|h| h.open_queries()).unwrap_or_default();
            Ok(
                json!({ "queries": open.iter().map(|q| render_query(&v.store, q)).collect::<Vec<_>>() }),
            )
        }
        ("POST", ["queries", id]) => match (id.parse::<u64>(), &e.hub) {
            (Err(_), _) => Err(Error::Usage(format!("bad query id `{id}`"))),
            (_, None) => Err(Error::Usage("session does not accept feedback".into())),
            (Ok(id), Some(hub)) => parse_body::<Measurement>(body)
                .and_then(|m| hub.submit_answer(id, m))
                .map(accepted),
        },
        ("POST", ["proactive"]) => match &e.hub {
            None => Err(Error::Usage("session does not accept feedback".into())),
            Some(hub) => parse_body::<ProactiveBody>(body)
                .and_then(|b| hub.submit_proactive(b.kind, b.measurement))
                .map(accepted),
        },
        ("GET", ["episodes"]) => {
            let v = e.view.lock().expect("view lock");
            let offset = param(query, "offset").unwrap_or(0);
            let limit = param(query, "limit").unwrap_or(DEFAULT_PAGE);
            let page: Vec<Value> = v
                .store
                .episodes()
                .skip(offset)
                .take(limit)
                .map(|ep| {
                    json!({
                        "episode_id": ep.episode_id.0,
                        "origin": ep.origin,
                        "snapshot": ep.snapshot,
                        "steps": ep.len(),
                        "queried": v.queried.contains(&ep.episode_id),
                    })
                })
                .collect();
            Ok(json!({ "total": v.store.len(), "offset": offset, "episodes": page }))
        }
        ("GET", ["episodes", id]) => {
            let v = e.view.lock().expect("view lock");
            id.parse::<u64>()
                .map_err(|_| Error::Usage(format!("bad episode id `{id}`")))
                .and_then(|id| episode_detail(&v, EpisodeId(id)))
        }
        ("GET", ["metrics"]) => Ok(metrics(&e.view.lock().expect("view lock"))),
        _ => {
            return (
                404,
                json!({ "error": "no such route", "model_version": version() }),
            )
        }
    };
    let (status, mut reply) = match outcome {
        Ok(v) => (200, v),
        Err(err) => (status_of(&err), json!({ "error": err.to_string() })),
    };
    reply["model_version"] = json!(version());
    (status, reply)
}

#[derive(Deserialize)]
struct ProactiveBody {
    kind: InteractionKind,
    measurement: Measurement,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })
}

fn accepted(instance: Option<FeedbackInstance>) -> Value {
    json!({
        "accepted": true,
        "instance": instance.as_ref().map(encode_instance),
    })
}

fn param(query: &str, key: &str) -> Option<usize> {
    query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

fn status_of(err: &Error) -> u16 {
    match err {
        Error::Lookup(_) => 404,
        Error::Usage(_) => 409,
        _ => 400,
    }
}

/// Text rendering of the grid: `#` wall, `G` goal, `L` lava, `A` agent.
pub fn render_frame(spec: &GridSpec, agent: Option<Cell>) -> String {
    let mut rows = Vec::with_capacity(spec.height);
    for y in 0..spec.height {
        let row: String = (0..spec.width)
            .map(|x| {
                let c = Cell::new(x as i32, y as i32);
                if Some(c) == agent {
                    'A'
                } else if spec.wall_cells.contains(&c) {
                    '#'
                } else if spec.goal_cells.contains(&c) {
                    'G'
                } else if spec.lava_cells.contains(&c) {
                    'L'
                } else {
                    '.'
                }
            })
            .collect();
        rows.push(row);
    }
    rows.join("\n")
}

/// Frames for every state a target covers, plus the state it ends in.
pub fn target_frames(store: &EpisodeStore, target: &Target) -> Vec<String> {
    let spec = &store.spec;
    let span = |id: EpisodeId, start: usize, end: Option<usize>| -> Vec<String> {
        let Ok(ep) = store.get(id) else {
            return Vec::new();
        };
        let end = end.unwrap_or(ep.len()).min(ep.len());
        if start >= end {
            return Vec::new();
        }
        let steps = &ep.transitions[start..end];
        steps
            .iter()
            .map(|t| t.state.agent_cell)
            .chain(steps.last().map(|t| t.next_state.agent_cell))
            .map(|c| render_frame(spec, Some(c)))
            .collect()
    };
    match target {
        Target::StateAction { cell, .. } => vec![render_frame(spec, Some(*cell))],
        Target::Segment {
            episode,
            start,
            end,
            ..
        } => span(*episode, *start, Some(*end)),
        Target::Episode { episode } => span(*episode, 0, None),
        Target::FeatureSet { .. } => vec![render_frame(spec, None)],
        Target::WholeBehavior { .. } => Vec::new(),
    }
}

fn render_query(store: &EpisodeStore, q: &Query) -> Value {
    json!({
        "query_id": q.query_id,
        "kind": q.kind,
        "levels": q.levels,
        "targets": q.targets.iter().map(|t| json!({
            "target": encode_target(t),
            "episode_id": t.episode_id().map(|e| e.0),
            "frames": target_frames(store, t),
        })).collect::<Vec<_>>(),
    })
}

fn episode_detail(v: &SessionView, id: EpisodeId) -> Result<Value> {
    let ep = v.store.get(id)?;
    let ctx = ContextEncoding::default();
    let trace = match &v.ensemble {
        Some(ens) => (0..ep.len())
            .map(|i| ens.predict(&v.store, &Target::segment(id, i..i + 1)?, &ctx))
            .collect::<Result<Vec<f64>>>()?,
        None => Vec::new(),
    };
    Ok(json!({
        "episode_id": id.0,
        "origin": ep.origin,
        "snapshot": ep.snapshot,
        "actions": ep.transitions.iter().map(|t| t.action).collect::<Vec<_>>(),
        "frames": target_frames(&v.store, &Target::episode(id)),
        "reward_trace": trace,
    }))
}

fn metrics(v: &SessionView) -> Value {
    let spec = &v.store.spec;
    let ctx = ContextEncoding::default();
    let uncertainties: Vec<f64> = match &v.ensemble {
        Some(ens) => spec
            .state_actions()
            .iter()
            .filter_map(|(c, a)| {
                ens.uncertainty(&v.store, &Target::state_action(*c, *a), &ctx)
                    .ok()
            })
            .collect(),
        None => Vec::new(),
    };
    let (edges, counts) = histogram(&uncertainties, HISTOGRAM_BINS);
    json!({
        "round": v.round,
        "finished": v.finished,
        "instances": v.instances,
        "loss_trace": v.loss_trace,
        "alignment": v.metrics.iter().map(|m| m.alignment).collect::<Vec<_>>(),
        "snapshots": v.metrics,
        "uncertainty_histogram": { "edges": edges, "counts": counts },
    })
}

/// Equal-width bins over `[0, max]`; the last bin is closed.
pub fn histogram(xs: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    if xs.is_empty() || bins == 0 {
        return (Vec::new(), Vec::new());
    }
    let hi = xs.iter().copied().fold(0.0, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for x in xs {
        counts[((x / width) as usize).min(bins - 1)] += 1;
    }
    (edges, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_mark_cells() {
        let spec = GridSpec::default();
        let f = render_frame(&spec, Some(spec.start_cell));
        assert_eq!(f.lines().count(), spec.height);
        assert_eq!(f.matches('A').count(), 1);
        assert_eq!(f.matches('G').count(), spec.goal_cells.len());
        assert_eq!(f.matches('L').count(), spec.lava_cells.len());
    }

    #[test]
    fn histogram_counts_everything() {
        let (edges, counts) = histogram(&[0.0, 0.5, 1.0, 1.0], 4);
        assert_eq!(edges.len(), 5);
        assert_eq!(counts, vec![1, 0, 1, 2]);
        assert_eq!(histogram(&[0.0, 0.0], 3).1, vec![2, 0, 0]);
    }

    #[test]
    fn unknown_routes_are_404() {
        let registry: Registry = Arc::default();
        assert_eq!(route(&registry, "GET", "/nope", "").0, 404);
        assert_eq!(
            route(&registry, "GET", "/api/sessions/x/queries", "").0,
            404
        );
        let (status, body) = route(&registry, "GET", "/api/sessions", "");
        assert_eq!(status, 200);
        assert_eq!(body["sessions"], json!([]));
    }
}
