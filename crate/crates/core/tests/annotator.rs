mod common;

use common::*;
use hfrl::annotator::{Oracle, OracleConfig};
use hfrl::feedback::{
    validate_instance, vars, FeedbackState, FeedbackValue, InteractionKind, Target, Variable,
};
use hfrl::gridworld::{true_reward, Action, Cell, EnvState, EpisodeId, GridSpec};
use hfrl::query::Query;
use hfrl::store::EpisodeStore;
use proptest::prelude::*;

/// Mean true reward of a segment, summed straight from its transitions.
fn segment_truth(spec: &GridSpec, store: &EpisodeStore, t: &Target) -> f64 {
    let Target::Segment {
        episode,
        start,
        end,
        ..
    } = t
    else {
        panic!("segment expected")
    };
    let ep = store.get(*episode).unwrap();
    let r: f64 = ep.transitions[*start..*end]
        .iter()
        .map(|tr| true_reward(spec, &tr.state, tr.action))
        .sum();
    r / (end - start) as f64
}

fn all_segments(store: &EpisodeStore, ids: &[EpisodeId]) -> Vec<Target> {
    let mut out = Vec::new();
    for &id in ids {
        let n = store.get(id).unwrap().len();
        for len in 1..=3 {
            for start in 0..n.saturating_sub(len - 1) {
                out.push(Target::segment(id, start..start + len).unwrap());
            }
        }
    }
    out
}

fn choice(m: &hfrl::feedback::Measurement) -> i64 {
    match m.intrinsic.get(vars::CHOICE) {
        Some(Variable::Index(c)) => *c,
        other => panic!("no choice: {other:?}"),
    }
}

#[test]
fn argmax_annotator_agrees_with_true_reward_on_every_pair() {
    let spec = shaped_spec();
    let (store, ids) = random_buffer(&spec, 3, 11);
    let segs = all_segments(&store, &ids);
    let mut oracle = noiseless_oracle(&spec, 0);
    let mut checked = 0;
    for (i, a) in segs.iter().enumerate() {
        for b in &segs[i + 1..] {
            let (va, vb) = (
                segment_truth(&spec, &store, a),
                segment_truth(&spec, &store, b),
            );
            let m = oracle
                .respond(
                    &Query::new(
                        0,
                        InteractionKind::PairwiseChoice,
                        vec![a.clone(), b.clone()],
                    ),
                    &store,
                )
                .unwrap();
            let expected = if (va - vb).abs() <= 1e-9 {
                -1
            } else if va > vb {
                0
            } else {
                1
            };
            assert_eq!(choice(&m), expected, "{a:?} ({va}) vs {b:?} ({vb})");
            checked += 1;
        }
    }
    assert!(checked > 1000, "only {checked} pairs");
}

/// Pearson chi-square statistic of observed counts against probabilities.
fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Two targets from a spread buffer whose true values differ by about `gap`.
fn pair_with_gap(
    spec: &GridSpec,
    store: &EpisodeStore,
    ids: &[EpisodeId],
    gap: f64,
) -> (Target, Target, f64, f64) {
    let segs = all_segments(store, ids);
    let vals: Vec<f64> = segs.iter().map(|s| segment_truth(spec, store, s)).collect();
    let mut best = (0, 1, f64::INFINITY);
    for i in 0..segs.len() {
        for j in 0..segs.len() {
            let d = ((vals[i] - vals[j]) - gap).abs();
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    (
        segs[best.0].clone(),
        segs[best.1].clone(),
        vals[best.0],
        vals[best.1],
    )
}

#[test]
fn pairwise_frequencies_follow_the_boltzmann_model() {
    let spec = shaped_spec();
    let (store, ids) = spread_buffer(&spec, 4, 3);
    let beta = 2.0;
    let (a, b, va, vb) = pair_with_gap(&spec, &store, &ids, 0.4);
    let mut oracle = boltzmann_oracle(&spec, beta, 17);
    let draws = 20_000;
    let mut counts = [0u64; 2];
    let q = Query::new(0, InteractionKind::PairwiseChoice, vec![a, b]);
    for _ in 0..draws {
        counts[choice(&oracle.respond(&q, &store).unwrap()) as usize] += 1;
    }
    let pa = 1.0 / (1.0 + (-beta * (va - vb)).exp());
    let stat = chi_square(&counts, &[pa, 1.0 - pa]);
    // Critical value of chi-square with one degree of freedom at p = 0.001.
    assert!(stat < 10.83, "chi2 {stat}, counts {counts:?}, p {pa}");
}

#[test]
fn ranking_frequencies_follow_plackett_luce() {
    let spec = shaped_spec();
    let (store, ids) = spread_buffer(&spec, 4, 5);
    let segs = all_segments(&store, &ids);
    let mut picked: Vec<(Target, f64)> = Vec::new();
    for s in &segs {
        let v = segment_truth(&spec, &store, s);
        if picked.iter().all(|(_, w)| (w - v).abs() > 0.15) {
            picked.push((s.clone(), v));
        }
        if picked.len() == 3 {
            break;
        }
    }
    assert_eq!(picked.len(), 3);
    let beta = 3.0;
    let v: Vec<f64> = picked.iter().map(|p| p.1).collect();
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let probs: Vec<f64> = perms
        .iter()
        .map(|p| {
            let w: Vec<f64> = p.iter().map(|&i| (beta * v[i]).exp()).collect();
            w[0] / (w[0] + w[1] + w[2]) * w[1] / (w[1] + w[2])
        })
        .collect();
    let mut oracle = boltzmann_oracle(&spec, beta, 23);
    let q = Query::new(
        0,
        InteractionKind::RankingList,
        picked.iter().map(|p| p.0.clone()).collect(),
    );
    let mut counts = [0u64; 6];
    for _ in 0..30_000 {
        let m = oracle.respond(&q, &store).unwrap();
        let Some(Variable::Order(groups)) = m.intrinsic.get(vars::ORDER) else {
            panic!("no order")
        };
        let flat: Vec<usize> = groups.iter().flatten().copied().collect();
        counts[perms.iter().position(|p| p[..] == flat[..]).unwrap()] += 1;
    }
    let stat = chi_square(&counts, &probs);
    // Five degrees of freedom at p = 0.001.
    assert!(
        stat < 20.52,
        "chi2 {stat}, counts {counts:?}, probs {probs:?}"
    );
}

#[test]
fn zero_rationality_is_a_coin_flip() {
    let spec = shaped_spec();
    let (store, ids) = spread_buffer(&spec, 4, 3);
    let (a, b, _, _) = pair_with_gap(&spec, &store, &ids, 1.0);
    let mut oracle = boltzmann_oracle(&spec, 0.0, 5);
    let q = Query::new(0, InteractionKind::PairwiseChoice, vec![a, b]);
    let first = (0..10_000)
        .filter(|_| choice(&oracle.respond(&q, &store).unwrap()) == 0)
        .count();
    assert!((first as f64 / 10_000.0 - 0.5).abs() <= 0.02, "{first}");
}

#[test]
fn asymmetry_bias_shifts_ratings() {
    let spec = GridSpec {
        true_weights: [0.0; hfrl::gridworld::FEATURE_DIM],
        ..GridSpec::default()
    };
    let (store, ids) = random_buffer(&spec, 1, 0);
    let cfg = OracleConfig {
        asymmetry_bias: 0.5,
        ..OracleConfig::rational(0)
    };
    let mut oracle = Oracle::new(cfg, &spec).unwrap();
    let q = Query::new(
        0,
        InteractionKind::RatingSlider,
        vec![Target::episode(ids[0])],
    );
    let m = oracle.respond(&q, &store).unwrap();
    assert_eq!(m.intrinsic.get(vars::VALUE), Some(&Variable::Scalar(0.5)));
}

#[test]
fn demonstrations_are_reproducible_and_skill_weighted() {
    let spec = shaped_spec();
    let start = EnvState {
        agent_cell: Cell { x: 2, y: 2 },
        step_index: 0,
        done: false,
    };
    let make = |skill: f64| {
        Oracle::new(
            OracleConfig {
                skill,
                rationality: 5.0,
                ..OracleConfig::default()
            },
            &spec,
        )
        .unwrap()
    };
    assert_eq!(
        make(0.7).demonstrate(start, 6).unwrap(),
        make(0.7).demonstrate(start, 6).unwrap()
    );

    let tr = translator();
    for (skill, weight) in [
        (1.0, 1.0),
        (0.3, 0.3),
        (0.0, tr.params.min_instruction_weight),
    ] {
        let mut store = EpisodeStore::new(spec.clone());
        let m = make(skill).demonstrate(start, 6).unwrap();
        let m = store
            .materialize(InteractionKind::Demonstration, &m)
            .unwrap();
        let inst = tr
            .translate(
                &m,
                &FeedbackState::default(),
                InteractionKind::Demonstration,
            )
            .unwrap()
            .instance
            .unwrap();
        assert_eq!(inst.value, FeedbackValue::Instruction(weight));
    }

    // One step from the goal, an argmax demonstrator steps onto it.
    let mut oracle = noiseless_oracle(&spec, 0);
    let near = EnvState {
        agent_cell: Cell { x: 6, y: 7 },
        step_index: 0,
        done: false,
    };
    let m = oracle.demonstrate(near, 5).unwrap();
    assert_eq!(
        m.intrinsic.get(vars::ACTIONS),
        Some(&Variable::Actions(vec![Action::Right]))
    );
}

#[test]
fn unavailable_annotators_stay_silent() {
    let spec = shaped_spec();
    let (store, ids) = random_buffer(&spec, 5, 2);
    let mut oracle = Oracle::new(
        OracleConfig {
            availability: 0.0,
            ..OracleConfig::default()
        },
        &spec,
    )
    .unwrap();
    for id in ids {
        assert!(oracle.proactive_emit(store.get(id).unwrap()).is_empty());
    }
}

fn oracle_config() -> impl Strategy<Value = OracleConfig> {
    (
        any::<bool>(),
        0.0f64..20.0,
        0.0f64..1.0,
        0.0f64..=1.0,
        -1.0f64..1.0,
        -0.05f64..0.05,
        0.0f64..=1.0,
        any::<u64>(),
    )
        .prop_map(
            |(
                deterministic,
                rationality,
                noise_sigma,
                mislabel_prob,
                asymmetry_bias,
                drift_per_step,
                skill,
                seed,
            )| {
                OracleConfig {
                    deterministic,
                    rationality,
                    noise_sigma,
                    mislabel_prob,
                    asymmetry_bias,
                    drift_per_step,
                    skill,
                    availability: 1.0,
                    seed,
                    ..OracleConfig::default()
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_answer_translates(cfg in oracle_config(), buffer_seed in 0..1000u64, query_seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let spec = shaped_spec();
        let (mut store, buffer) = spread_buffer(&spec, 4, buffer_seed);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(query_seed);
        let mut oracle = Oracle::new(cfg, &spec).unwrap();
        let tr = translator();
        let fs = FeedbackState::default();
        let cells: Vec<Cell> = spec.active_cells().collect();
        let mut queries = Vec::new();
        for kind in InteractionKind::ALL {
            for _ in 0..4 {
                let seg = random_segment(&store, &buffer, &mut rng);
                let targets = match kind {
                    InteractionKind::PairwiseChoice => vec![seg, random_segment(&store, &buffer, &mut rng)],
                    InteractionKind::RankingList => {
                        let mut ts = vec![seg];
                        while ts.len() < 4 {
                            let t = random_segment(&store, &buffer, &mut rng);
                            if !ts.contains(&t) {
                                ts.push(t);
                            }
                        }
                        ts
                    }
                    InteractionKind::ActionAdvice | InteractionKind::Demonstration => {
                        vec![Target::state_action(cells[rng.random_range(0..cells.len())], Action::ALL[rng.random_range(0..4)])]
                    }
                    InteractionKind::FeatureBrush => vec![Target::features([rng.random_range(0..8usize), rng.random_range(0..8)]).unwrap()],
                    InteractionKind::MetaAnswer => vec![],
                    _ => vec![seg],
                };
                if kind == InteractionKind::PairwiseChoice && targets[0] == targets[1] {
                    continue;
                }
                let mut q = Query::new(queries.len() as u64, kind, targets);
                if kind == InteractionKind::RatingSlider && rng.random::<bool>() {
                    q.levels = Some(rng.random_range(2..8));
                }
                queries.push(q);
            }
        }
        for q in &queries {
            let m = oracle.respond(q, &store).unwrap();
            prop_assert!(m.validate().is_ok());
            let m = store.materialize(q.kind, &m).unwrap();
            let out = tr.translate(&m, &fs, q.kind);
            prop_assert!(out.is_ok(), "{:?} rejected: {:?}", q.kind, out);
            if let Some(inst) = out.unwrap().instance {
                prop_assert!(validate_instance(&inst).is_ok());
            }
        }
        for id in &buffer {
            for m in oracle.proactive_emit(store.get(*id).unwrap()) {
                let out = tr.translate(&m, &fs, InteractionKind::CritiqueButton).unwrap();
                prop_assert!(out.instance.is_some());
            }
        }
    }
}
