//! Feedback-quality estimators and reward-alignment evaluation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{ContextEncoding, FeedbackInstance, Target, CONTEXT_DIM};
use crate::gridworld::{
    evaluate_policy, optimal_values, true_cell_reward, Action, Cell, GridSpec, Policy,
};
use crate::reward::{mean, population_std, Ensemble};
use crate::store::EpisodeStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpread {
    pub targets: Vec<Target>,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub per_target: Vec<TargetSpread>,
    /// Square root of the size-weighted mean of the group variances, over
    /// groups with at least two values.
    pub pooled_std: f64,
    /// Values contributing to the pooled estimate.
    pub n: usize,
}

/// Numeric values grouped by identical target lists; relations and
/// instructions are skipped.
fn numeric_groups(instances: &[FeedbackInstance]) -> BTreeMap<Vec<Target>, Vec<f64>> {
    let mut groups: BTreeMap<Vec<Target>, Vec<f64>> = BTreeMap::new();
    for inst in instances {
        if let Some(v) = inst.value.numeric() {
            groups.entry(inst.targets.clone()).or_default().push(v);
        }
    }
    groups
}

/// Spread of repeated feedback on the same targets.
pub fn precision(instances: &[FeedbackInstance]) -> Result<PrecisionReport> {
    precision_of_groups(numeric_groups(instances))
}

pub fn precision_of_groups(groups: BTreeMap<Vec<Target>, Vec<f64>>) -> Result<PrecisionReport> {
    let per_target: Vec<TargetSpread> = groups
        .into_iter()
        .map(|(targets, values)| TargetSpread {
            targets,
            std: population_std(&values),
            n: values.len(),
        })
        .collect();
    let repeated: Vec<&TargetSpread> = per_target.iter().filter(|g| g.n >= 2).collect();
    if repeated.is_empty() {
        return Err(Error::Estimation(
            "precision needs at least one target with two or more values".into(),
        ));
    }
    let n: usize = repeated.iter().map(|g| g.n).sum();
    let pooled_var = repeated
        .iter()
        .map(|g| g.n as f64 * g.std * g.std)
        .sum::<f64>()
        / n as f64;
    Ok(PrecisionReport {
        per_target,
        pooled_std: pooled_var.sqrt(),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub mean_shift: f64,
    pub positive_fraction_delta: f64,
    pub n: usize,
}

/// Systematic deviation from pre-labeled reference values.
///
/// Every numeric single-target instance whose target has a reference value
/// is compared with it.
pub fn bias(
    instances: &[FeedbackInstance],
    reference: &BTreeMap<Target, f64>,
) -> Result<BiasReport> {
    let pairs: Vec<(f64, f64)> = instances
        .iter()
        .filter_map(
            |inst| match (inst.targets.as_slice(), inst.value.numeric()) {
                ([t], Some(v)) => reference.get(t).map(|r| (v, *r)),
                _ => None,
            },
        )
        .collect();
    bias_of_pairs(&pairs)
}

/// `(emitted, reference)` pairs.
pub fn bias_of_pairs(pairs: &[(f64, f64)]) -> Result<BiasReport> {
    if pairs.is_empty() {
        return Err(Error::Estimation(
            "no feedback shares a target with the reference set".into(),
        ));
    }
    let n = pairs.len() as f64;
    let positive = |x: f64| if x > 0.0 { 1.0 } else { 0.0 };
    Ok(BiasReport {
        mean_shift: pairs.iter().map(|(e, r)| e - r).sum::<f64>() / n,
        positive_fraction_delta: pairs
            .iter()
            .map(|(e, r)| positive(*e) - positive(*r))
            .sum::<f64>()
            / n,
        n: pairs.len(),
    })
}

/// Mean drop in ensemble disagreement over the probes (may be negative).
pub fn informativeness(
    before: &Ensemble,
    after: &Ensemble,
    store: &EpisodeStore,
    probes: &[Target],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Usage("informativeness needs probe targets".into()));
    }
    let ctx = ContextEncoding::default();
    let mean_unc = |e: &Ensemble| -> Result<f64> {
        let u: Vec<f64> = probes
            .iter()
            .map(|t| e.uncertainty(store, t, &ctx))
            .collect::<Result<_>>()?;
        Ok(mean(&u))
    };
    Ok(mean_unc(before)? - mean_unc(after)?)
}

/// Ranks with ties sharing their mean rank (1-based).
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    pearson(&mid_ranks(x), &mid_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub rho: f64,
    /// Set when the predictions (or the truth) were constant; `rho` is then 0.
    pub degenerate: bool,
}

/// Rank agreement between a reward estimate and the hidden reward over every
/// state-action of the grid.
pub fn alignment(spec: &GridSpec, predict: impl Fn(Cell, Action) -> f64) -> Result<Alignment> {
    let sa = spec.state_actions();
    if sa.is_empty() {
        return Err(Error::Usage(
            "alignment over an empty state-action set".into(),
        ));
    }
    let pred: Vec<f64> = sa.iter().map(|(c, a)| predict(*c, *a)).collect();
    let truth: Vec<f64> = sa
        .iter()
        .map(|(c, a)| true_cell_reward(spec, *c, *a))
        .collect();
    Ok(match spearman(&pred, &truth) {
        Some(rho) => Alignment {
            rho,
            degenerate: false,
        },
        None => {
            log::warn!("alignment of a constant reward is undefined; reporting 0");
            Alignment {
                rho: 0.0,
                degenerate: true,
            }
        }
    })
}

pub fn ensemble_alignment(spec: &GridSpec, ensemble: &Ensemble) -> Result<Alignment> {
    alignment(spec, |c, a| ensemble.cell_reward(spec, c, a))
}

/// `V*(start) − V^π(start)` under the hidden reward.
pub fn regret(policy: &Policy, spec: &GridSpec, gamma: f64) -> Result<f64> {
    let truth = |c, a| true_cell_reward(spec, c, a);
    let optimal = optimal_values(spec, truth, gamma)?;
    let values = evaluate_policy(spec, policy, truth, gamma)?;
    let i = spec.cell_index(spec.start_cell);
    // Both sides converge to within the value tolerance; absorb that slack.
    Ok((optimal.values[i] - values[i]).max(0.0))
}

/// Least-squares coefficients of feedback values on the context components
/// (intercept first). Components without variation get coefficient 0.
pub fn context_regression(instances: &[FeedbackInstance]) -> Result<[f64; CONTEXT_DIM + 1]> {
    let rows: Vec<(ContextEncoding, f64)> = instances
        .iter()
        .filter_map(|i| i.value.numeric().map(|v| (i.context, v)))
        .collect();
    if rows.len() < 2 {
        return Err(Error::Estimation(
            "context regression needs two numeric values".into(),
        ));
    }
    const P: usize = CONTEXT_DIM + 1;
    let x = |c: &ContextEncoding| {
        let mut r = [1.0; P];
        r[1..].copy_from_slice(&c.0);
        r
    };
    let mut a = [[0.0; P]; P];
    let mut b = [0.0; P];
    for (c, v) in &rows {
        let r = x(c);
        for i in 0..P {
            b[i] += r[i] * v;
            for j in 0..P {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    // Small ridge keeps constant components solvable.
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += 1e-9;
    }
    solve(a, b).ok_or_else(|| Error::Estimation("singular context design".into()))
}

fn solve<const P: usize>(mut a: [[f64; P]; P], mut b: [f64; P]) -> Option<[f64; P]> {
    for col in 0..P {
        let pivot = (col..P).max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))?;
        if a[pivot][col].abs() < 1e-15 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in 0..P {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot_row = a[col];
                for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut out = [0.0; P];
    for i in 0..P {
        out[i] = b[i] / a[i][i];
    }
    Some(out)
}

/// One metrics snapshot per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub round: usize,
    pub model_version: u64,
    pub instances: usize,
    pub alignment: f64,
    /// Absent when no agent was trained.
    pub regret: Option<f64>,
    pub mean_uncertainty: f64,
    /// Absent before the first fit.
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub snapshots: Vec<MetricsSnapshot>,
    pub precision_pooled_std: Option<f64>,
    pub bias_mean_shift: Option<f64>,
    pub bias_positive_fraction_delta: Option<f64>,
    pub context_coefficients: Option<Vec<f64>>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

impl MetricsReport {
    pub fn write_tsv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "round\tmodel_version\tinstances\talignment\tregret\tmean_uncertainty\tfinal_loss"
        )?;
        for s in &self.snapshots {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.round,
                s.model_version,
                s.instances,
                s.alignment,
                opt(s.regret),
                s.mean_uncertainty,
                opt(s.final_loss)
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{ActionTable, DEFAULT_WEIGHTS};
    use crate::reward::RewardModel;

    #[test]
    fn precision_examples() {
        let t = || vec![Target::state_action(Cell::new(0, 0), Action::Up)];
        let mut g = BTreeMap::new();
        g.insert(t(), vec![1.0, 1.0, 1.0]);
        assert_eq!(precision_of_groups(g).unwrap().pooled_std, 0.0);
        let mut g = BTreeMap::new();
        g.insert(t(), vec![-1.0, 1.0]);
        assert_eq!(precision_of_groups(g).unwrap().pooled_std, 1.0);
        let mut g = BTreeMap::new();
        g.insert(t(), vec![0.3]);
        assert!(matches!(precision_of_groups(g), Err(Error::Estimation(_))));
    }

    #[test]
    fn bias_examples() {
        let r = bias_of_pairs(&[(0.2, 0.2), (-0.4, -0.4)]).unwrap();
        assert_eq!((r.mean_shift, r.positive_fraction_delta), (0.0, 0.0));
        let r = bias_of_pairs(&[(0.5, 0.0), (0.4, -0.1)]).unwrap();
        assert!((r.mean_shift - 0.5).abs() < 1e-15);
        assert_eq!(r.positive_fraction_delta, 1.0);
        assert!(bias_of_pairs(&[]).is_err());
    }

    #[test]
    fn alignment_examples() {
        let spec = GridSpec::default();
        let truth = RewardModel::linear(DEFAULT_WEIGHTS);
        let same = alignment(&spec, |c, a| truth.cell_reward(&spec, c, a)).unwrap();
        assert!((same.rho - 1.0).abs() < 1e-12);
        let flipped = alignment(&spec, |c, a| -truth.cell_reward(&spec, c, a)).unwrap();
        assert!((flipped.rho + 1.0).abs() < 1e-12);
        let mut w = DEFAULT_WEIGHTS;
        w[0] += 3.0;
        let shifted = RewardModel::linear(w);
        let s = alignment(&spec, |c, a| shifted.cell_reward(&spec, c, a)).unwrap();
        assert!((s.rho - 1.0).abs() < 1e-12);
        let flat = alignment(&spec, |_, _| 0.2).unwrap();
        assert!(flat.degenerate && flat.rho == 0.0);
    }

    #[test]
    fn mid_ranks_share_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn regret_of_optimal_policy_is_zero() {
        let spec = GridSpec::default();
        let v = optimal_values(&spec, |c, a| true_cell_reward(&spec, c, a), 0.95).unwrap();
        let r = regret(&Policy::Greedy { table: v.policy }, &spec, 0.95).unwrap();
        assert!(r < 1e-8);
        let stuck = Policy::Greedy {
            table: ActionTable::constant(&spec, Action::Up),
        };
        assert!(regret(&stuck, &spec, 0.95).unwrap() > 0.0);
    }

    #[test]
    fn context_regression_recovers_slope() {
        use crate::feedback::{classify, FeedbackType, FeedbackValue};
        let insts: Vec<FeedbackInstance> = (0..20)
            .map(|i| {
                let conf = i as f64 / 20.0;
                FeedbackInstance::new(
                    i,
                    "u",
                    0,
                    classify(FeedbackType::Shaping),
                    vec![Target::state_action(Cell::new(0, 0), Action::Up)],
                    FeedbackValue::Continuous(0.1 + 0.5 * conf),
                    ContextEncoding::default().with_confidence(conf),
                )
                .unwrap()
            })
            .collect();
        let c = context_regression(&insts).unwrap();
        assert!((c[0] - 0.1).abs() < 1e-6);
        assert!((c[1 + ContextEncoding::CONFIDENCE] - 0.5).abs() < 1e-6);
    }
}
