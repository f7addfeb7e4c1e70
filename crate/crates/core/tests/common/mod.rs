//! Experiment scaffolding shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hfrl::annotator::{Oracle, OracleConfig};
use hfrl::feedback::{FeedbackInstance, FeedbackState, InteractionKind, Measurement};
use hfrl::gridworld::{rollout, EpisodeId, FeatureVector, GridSpec, Policy};
use hfrl::metrics::ensemble_alignment;
use hfrl::query::{pair_key, propose_queries, Query, QueryStrategy, StrategyTag};
use hfrl::reward::{fit, Ensemble, EnsembleConfig, FitConfig, LossWeights, PreparedBatch};
use hfrl::store::EpisodeStore;
use hfrl::translator::{Lexicon, Translator, TranslatorParams};

/// Hidden weights with graded distance terms, so that most segment pairs
/// differ in true value. Indices follow the feature layout: bias, goal dx,
/// goal dy, at goal, on lava, adjacent lava, step, blocked.
pub const SHAPED_WEIGHTS: FeatureVector = [0.0, -0.12, -0.1, 10.0, -3.0, -0.2, -0.01, -0.1];

pub fn shaped_spec() -> GridSpec {
    GridSpec {
        true_weights: SHAPED_WEIGHTS,
        ..GridSpec::default()
    }
}

/// Uniformly random rollouts with ids `0..n`.
pub fn random_buffer(spec: &GridSpec, n: usize, seed: u64) -> (EpisodeStore, Vec<EpisodeId>) {
    let mut store = EpisodeStore::new(spec.clone());
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let ep = rollout(
            spec,
            &Policy::Uniform,
            EpisodeId(i as u64),
            seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            spec.max_steps,
        )
        .expect("rollout");
        ids.push(ep.episode_id);
        store.insert(ep).expect("fresh id");
    }
    (store, ids)
}

/// Uniformly random rollouts with ids `0..n`, each from a uniformly drawn
/// non-terminal start cell so that goal and lava entries are covered.
pub fn spread_buffer(spec: &GridSpec, n: usize, seed: u64) -> (EpisodeStore, Vec<EpisodeId>) {
    use rand::{Rng, SeedableRng};
    let starts: Vec<_> = spec
        .active_cells()
        .filter(|c| !spec.is_terminal(*c))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = EpisodeStore::new(spec.clone());
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let from = GridSpec {
            start_cell: starts[rng.random_range(0..starts.len())],
            ..spec.clone()
        };
        let ep = rollout(
            &from,
            &Policy::Uniform,
            EpisodeId(i as u64),
            rng.random(),
            spec.max_steps,
        )
        .expect("rollout");
        ids.push(ep.episode_id);
        store.insert(ep).expect("fresh id");
    }
    (store, ids)
}

pub fn translator() -> Translator {
    Translator::new(TranslatorParams::default(), Lexicon::default())
}

pub fn noiseless_oracle(spec: &GridSpec, seed: u64) -> Oracle {
    Oracle::new(
        OracleConfig {
            deterministic: true,
            ..OracleConfig::rational(seed)
        },
        spec,
    )
    .expect("oracle")
}

pub fn boltzmann_oracle(spec: &GridSpec, rationality: f64, seed: u64) -> Oracle {
    Oracle::new(
        OracleConfig {
            deterministic: false,
            rationality,
            ..OracleConfig::rational(seed)
        },
        spec,
    )
    .expect("oracle")
}

/// Answers every query and translates the answers.
pub fn answer_all(
    oracle: &mut Oracle,
    store: &mut EpisodeStore,
    queries: &[Query],
    first_id: u64,
) -> Vec<FeedbackInstance> {
    let tr = translator();
    let fs = FeedbackState::default();
    let mut out = Vec::new();
    for q in queries {
        let m: Measurement = oracle.respond(q, store).expect("oracle answers");
        let m = store.materialize(q.kind, &m).expect("materialize");
        if let Some(mut inst) = tr.translate(&m, &fs, q.kind).expect("translates").instance {
            inst.instance_id = first_id + out.len() as u64;
            out.push(inst);
        }
    }
    out
}

pub fn linear_config() -> EnsembleConfig {
    EnsembleConfig::default()
}

pub fn fit_config(epochs: usize, seed: u64) -> FitConfig {
    FitConfig {
        lr: 1.0,
        epochs,
        batch_size: 0,
        seed,
        bootstrap: false,
    }
}

pub fn fit_on(
    start: &Ensemble,
    store: &EpisodeStore,
    data: &[FeedbackInstance],
    weights: &LossWeights,
    cfg: &FitConfig,
) -> Ensemble {
    let batch = PreparedBatch::prepare(store, data).expect("prepare");
    fit(start, &batch, weights, cfg).expect("fit").0
}

pub fn alignment_of(spec: &GridSpec, e: &Ensemble) -> f64 {
    ensemble_alignment(spec, e).expect("alignment").rho
}

/// Preference learning in rounds of `per_round` queries; returns the
/// alignment after each round.
pub struct ActiveRun {
    pub queries: Vec<usize>,
    pub alignment: Vec<f64>,
}

impl ActiveRun {
    /// Queries spent when alignment first reached `level`.
    pub fn queries_to(&self, level: f64) -> Option<usize> {
        self.alignment
            .iter()
            .position(|a| *a >= level)
            .map(|i| self.queries[i])
    }
}

pub struct ActiveSetup {
    pub episodes: usize,
    pub per_round: usize,
    pub rounds: usize,
    pub pool_size: usize,
    pub segment_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub init_sigma: f64,
    pub bootstrap: bool,
    /// Draw episodes from spread start cells rather than the start cell.
    pub spread: bool,
    /// Size of a shared uniformly sampled first round.
    pub warmup: usize,
    /// Boltzmann rationality of the annotator; `None` answers noiselessly.
    pub rationality: Option<f64>,
    pub l2: f64,
}

pub fn active_run(spec: &GridSpec, tag: StrategyTag, setup: &ActiveSetup, seed: u64) -> ActiveRun {
    let (mut store, buffer) = if setup.spread {
        spread_buffer(spec, setup.episodes, seed)
    } else {
        random_buffer(spec, setup.episodes, seed)
    };
    let mut oracle = match setup.rationality {
        None => noiseless_oracle(spec, seed),
        Some(beta) => boltzmann_oracle(spec, beta, seed),
    };
    let cfg = EnsembleConfig {
        init_sigma: setup.init_sigma,
        ..linear_config()
    };
    let mut ensemble = Ensemble::new(&cfg, seed).expect("ensemble");
    let strategy = QueryStrategy {
        tag,
        pool_size: setup.pool_size,
        k: setup.per_round,
        segment_len: setup.segment_len,
    };
    let weights = LossWeights {
        l2: setup.l2,
        ..LossWeights::default()
    };
    let mut asked = BTreeSet::new();
    let mut data = Vec::new();
    let mut run = ActiveRun {
        queries: Vec::new(),
        alignment: Vec::new(),
    };
    for round in 0..setup.rounds {
        let this_round = if round == 0 && setup.warmup > 0 {
            QueryStrategy {
                tag: StrategyTag::UniformRandom,
                k: setup.warmup,
                ..strategy
            }
        } else {
            strategy
        };
        let qs = propose_queries(
            &store,
            &buffer,
            &ensemble,
            &this_round,
            seed ^ (round as u64) << 20,
            &asked,
        )
        .expect("proposal");
        for q in &qs {
            asked.insert(pair_key(&q.targets[0], &q.targets[1]));
        }
        let first = data.len() as u64;
        data.extend(answer_all(&mut oracle, &mut store, &qs, first));
        let fc = FitConfig {
            lr: setup.lr,
            bootstrap: setup.bootstrap,
            ..fit_config(setup.epochs, seed ^ round as u64)
        };
        ensemble = fit_on(&ensemble, &store, &data, &weights, &fc);
        run.queries.push(data.len());
        run.alignment.push(alignment_of(spec, &ensemble));
    }
    run
}

pub fn pairwise(targets: Vec<hfrl::feedback::Target>, id: u64) -> Query {
    Query::new(id, InteractionKind::PairwiseChoice, targets)
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// A random segment of up to 8 steps from one of `buffer`'s episodes.
pub fn random_segment(
    store: &EpisodeStore,
    buffer: &[EpisodeId],
    rng: &mut impl rand::Rng,
) -> hfrl::feedback::Target {
    let id = buffer[rng.random_range(0..buffer.len())];
    let len = store.get(id).expect("buffered").len();
    let start = rng.random_range(0..len);
    let end = (start + rng.random_range(1..=8)).min(len);
    hfrl::feedback::Target::segment(id, start..end).expect("nonempty range")
}

/// A buffer of spread rollouts and `n` translated instances drawn from
/// every reward-bearing interaction kind, answered by a noisy annotator.
pub fn mixed_batch(seed: u64, n: usize) -> (EpisodeStore, Vec<FeedbackInstance>) {
    use hfrl::feedback::Target;
    use hfrl::gridworld::Action;
    use rand::{Rng, SeedableRng};

    let spec = shaped_spec();
    let (mut store, buffer) = spread_buffer(&spec, 6, seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let kinds = [
        InteractionKind::PairwiseChoice,
        InteractionKind::RankingList,
        InteractionKind::RatingSlider,
        InteractionKind::CritiqueButton,
        InteractionKind::ActionAdvice,
        InteractionKind::Demonstration,
        InteractionKind::SegmentCorrection,
        InteractionKind::FeatureBrush,
    ];
    let cells: Vec<_> = spec
        .active_cells()
        .filter(|c| !spec.is_terminal(*c))
        .collect();
    let mut queries = Vec::new();
    for id in 0..n as u64 {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let targets = match kind {
            InteractionKind::PairwiseChoice => vec![
                random_segment(&store, &buffer, &mut rng),
                random_segment(&store, &buffer, &mut rng),
            ],
            InteractionKind::RankingList => {
                let mut ts: Vec<Target> = Vec::new();
                while ts.len() < 3 {
                    let t = random_segment(&store, &buffer, &mut rng);
                    if !ts.contains(&t) {
                        ts.push(t);
                    }
                }
                ts
            }
            InteractionKind::ActionAdvice | InteractionKind::Demonstration => {
                let cell = cells[rng.random_range(0..cells.len())];
                vec![Target::state_action(
                    cell,
                    Action::ALL[rng.random_range(0..4)],
                )]
            }
            InteractionKind::FeatureBrush => {
                vec![Target::features([rng.random_range(1..FEATURE_DIM_USIZE)])
                    .expect("feature index")]
            }
            _ => vec![random_segment(&store, &buffer, &mut rng)],
        };
        if kind == InteractionKind::PairwiseChoice && targets[0] == targets[1] {
            continue;
        }
        let mut q = Query::new(id, kind, targets);
        if kind == InteractionKind::RatingSlider {
            q.levels = Some(5);
        }
        queries.push(q);
    }
    let mut oracle = boltzmann_oracle(&spec, 2.0, seed);
    let data = answer_all(&mut oracle, &mut store, &queries, 0);
    (store, data)
}

const FEATURE_DIM_USIZE: usize = hfrl::gridworld::FEATURE_DIM;

/// Largest relative error, as `|a - n| / max(|a|, |n|, 1e-3)` per
/// parameter, between the analytic gradient and a central difference.
pub fn gradient_error(
    model: &hfrl::reward::RewardModel,
    batch: &PreparedBatch,
    w: &LossWeights,
) -> f64 {
    let (_, analytic) = hfrl::reward::loss_and_grad(model, batch, w).expect("loss");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut up = model.clone();
        up.params[i] += h;
        let mut down = model.clone();
        down.params[i] -= h;
        let lu = hfrl::reward::loss_and_grad(&up, batch, w).expect("loss").0;
        let ld = hfrl::reward::loss_and_grad(&down, batch, w)
            .expect("loss")
            .0;
        let numeric = (lu - ld) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
    }
    worst
}

/// Continuous ratings from `cfg`, one per target in order, translated.
pub fn ratings(
    spec: &GridSpec,
    cfg: OracleConfig,
    store: &EpisodeStore,
    targets: &[hfrl::feedback::Target],
) -> Vec<FeedbackInstance> {
    let mut oracle = Oracle::new(cfg, spec).expect("oracle");
    let tr = translator();
    let fs = FeedbackState::default();
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let m = oracle
                .respond(
                    &Query::new(i as u64, InteractionKind::RatingSlider, vec![t.clone()]),
                    store,
                )
                .expect("answer");
            let mut inst = tr
                .translate(&m, &fs, InteractionKind::RatingSlider)
                .expect("translate")
                .instance
                .expect("rating");
            inst.instance_id = i as u64;
            inst
        })
        .collect()
}

/// Pooled std of `repeats` noisy ratings of one segment.
pub fn precision_scenario(noise_sigma: f64, repeats: usize, seed: u64) -> f64 {
    let spec = GridSpec::default();
    let (store, ids) = random_buffer(&spec, 1, seed);
    let target = hfrl::feedback::Target::segment(ids[0], 0..1).expect("segment");
    let cfg = OracleConfig {
        noise_sigma,
        seed,
        ..OracleConfig::default()
    };
    let data = ratings(&spec, cfg, &store, &vec![target; repeats]);
    hfrl::metrics::precision(&data)
        .expect("repeated target")
        .pooled_std
}

/// Mean shift of `n` biased ratings on random segments against their true values.
pub fn bias_scenario(asymmetry_bias: f64, noise_sigma: f64, n: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let spec = GridSpec::default();
    let (store, ids) = random_buffer(&spec, 20, seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<_> = (0..n)
        .map(|_| random_segment(&store, &ids, &mut rng))
        .collect();
    let cfg = OracleConfig {
        asymmetry_bias,
        noise_sigma,
        seed,
        ..OracleConfig::default()
    };
    let reference = noiseless_oracle(&spec, seed);
    let labels = targets
        .iter()
        .map(|t| {
            (
                t.clone(),
                reference.true_value(&store, t).expect("resolvable"),
            )
        })
        .collect();
    hfrl::metrics::bias(&ratings(&spec, cfg, &store, &targets), &labels)
        .expect("shared targets")
        .mean_shift
}
