//! Joint training objective over heterogeneous feedback.

use serde::{Deserialize, Serialize};

use super::{ModelKind, RewardModel, TIE_EPSILON};
use crate::error::{Error, Result};
use crate::feedback::{ContextEncoding, FeedbackInstance, FeedbackValue, Target};
use crate::gridworld::{FeatureVector, FEATURE_DIM};
use crate::store::EpisodeStore;

/// Per-family weights of the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub regression: f64,
    pub pairwise: f64,
    pub instruction: f64,
    pub feature: f64,
    /// Required lead of a demonstration over the rollout baseline.
    pub margin: f64,
    pub tie_epsilon: f64,
    /// Per-instance ridge penalty `l2/2 * |params|^2`.
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            regression: 1.0,
            pairwise: 1.0,
            instruction: 1.0,
            feature: 1.0,
            margin: 0.5,
            tie_epsilon: TIE_EPSILON,
            l2: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.regression,
            self.pairwise,
            self.instruction,
            self.feature,
        ];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::Spec(
                "loss weights must be nonnegative with at least one positive".into(),
            ));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0 && self.tie_epsilon > 0.0) {
            return Err(Error::Spec(
                "margin must be >= 0 and tie epsilon > 0".into(),
            ));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Spec("l2 penalty must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// A target resolved to its feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTarget {
    pub rows: Vec<FeatureVector>,
    /// Row mean; a linear model's prediction over the rows equals its
    /// prediction at the mean.
    mean: FeatureVector,
}

impl PreparedTarget {
    pub fn new(rows: Vec<FeatureVector>) -> Self {
        let mut mean = [0.0; FEATURE_DIM];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        if !rows.is_empty() {
            mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        }
        PreparedTarget { rows, mean }
    }

    fn predict(&self, model: &RewardModel, ctx: &ContextEncoding) -> f64 {
        match model.kind {
            ModelKind::Linear if !self.rows.is_empty() => model.eval(&self.mean, ctx),
            _ => model.eval_rows(&self.rows, ctx),
        }
    }

    fn grad(&self, model: &RewardModel, ctx: &ContextEncoding, scale: f64, grad: &mut [f64]) {
        if scale == 0.0 || self.rows.is_empty() {
            return;
        }
        if model.kind == ModelKind::Linear {
            model.accumulate_grad(&self.mean, ctx, scale, grad);
            return;
        }
        let s = scale / self.rows.len() as f64;
        for x in &self.rows {
            model.accumulate_grad(x, ctx, s, grad);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Regression {
        target: PreparedTarget,
        value: f64,
    },
    Feature {
        target: PreparedTarget,
        value: f64,
    },
    Pairs {
        targets: Vec<PreparedTarget>,
        strict: Vec<(usize, usize)>,
        ties: Vec<(usize, usize)>,
    },
    Instruction {
        target: PreparedTarget,
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct PreparedInstance {
    confidence: f64,
    context: ContextEncoding,
    term: Term,
}

/// Feedback instances with their targets resolved against an episode store.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreparedBatch {
    items: Vec<PreparedInstance>,
    /// Rows of the agent rollout buffer at preparation time.
    baseline: Option<PreparedTarget>,
}

impl PreparedBatch {
    pub fn prepare(store: &EpisodeStore, instances: &[FeedbackInstance]) -> Result<Self> {
        let resolve = |t: &Target| store.resolve(t).map(PreparedTarget::new);
        let mut items = Vec::with_capacity(instances.len());
        let mut needs_baseline = false;
        for inst in instances {
            let term = match &inst.value {
                FeedbackValue::Relation(r) => Term::Pairs {
                    targets: inst.targets.iter().map(resolve).collect::<Result<_>>()?,
                    strict: r.strict_pairs(),
                    ties: r.tie_pairs(),
                },
                FeedbackValue::Instruction(weight) => {
                    needs_baseline = true;
                    Term::Instruction {
                        target: resolve(&inst.targets[0])?,
                        weight: *weight,
                    }
                }
                v => {
                    let value = v.numeric().expect("absolute values are numeric");
                    let target = resolve(&inst.targets[0])?;
                    match inst.targets[0] {
                        Target::FeatureSet { .. } => Term::Feature { target, value },
                        _ => Term::Regression { target, value },
                    }
                }
            };
            items.push(PreparedInstance {
                confidence: inst.context.confidence(),
                context: inst.context,
                term,
            });
        }
        let baseline = needs_baseline.then(|| PreparedTarget::new(store.baseline_rows()));
        Ok(PreparedBatch { items, baseline })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Fraction of strict preference pairs the model orders correctly.
    pub fn pairwise_accuracy(&self, model: &RewardModel) -> Option<f64> {
        let (mut right, mut total) = (0usize, 0usize);
        for item in &self.items {
            if let Term::Pairs {
                targets, strict, ..
            } = &item.term
            {
                let p: Vec<f64> = targets
                    .iter()
                    .map(|t| t.predict(model, &item.context))
                    .collect();
                for &(a, b) in strict {
                    total += 1;
                    right += usize::from(p[a] > p[b]);
                }
            }
        }
        (total > 0).then(|| right as f64 / total as f64)
    }

    /// Loss and gradient over the instances at `indices`.
    pub(crate) fn loss_and_grad_at(
        &self,
        model: &RewardModel,
        indices: &[usize],
        w: &LossWeights,
        grad: &mut Vec<f64>,
    ) -> f64 {
        grad.clear();
        grad.resize(model.params.len(), 0.0);
        let mut loss = 0.0;
        if w.l2 > 0.0 {
            let n = indices.len() as f64;
            for (g, p) in grad.iter_mut().zip(&model.params) {
                loss += 0.5 * w.l2 * n * p * p;
                *g += w.l2 * n * p;
            }
        }
        for &i in indices {
            let item = &self.items[i];
            let ctx = &item.context;
            let c = item.confidence;
            match &item.term {
                Term::Regression { target, value } | Term::Feature { target, value } => {
                    let family = if matches!(item.term, Term::Feature { .. }) {
                        w.feature
                    } else {
                        w.regression
                    };
                    let k = c * family;
                    if k == 0.0 {
                        continue;
                    }
                    let err = target.predict(model, ctx) - value;
                    loss += k * err * err;
                    target.grad(model, ctx, 2.0 * k * err, grad);
                }
                Term::Pairs {
                    targets,
                    strict,
                    ties,
                } => {
                    let k = c * w.pairwise;
                    if k == 0.0 {
                        continue;
                    }
                    let p: Vec<f64> = targets.iter().map(|t| t.predict(model, ctx)).collect();
                    let mut dp = vec![0.0; p.len()];
                    for &(a, b) in strict {
                        let d = p[a] - p[b];
                        loss -= k * log_sigmoid(d);
                        let g = -k * sigmoid(-d);
                        dp[a] += g;
                        dp[b] -= g;
                    }
                    let eps = w.tie_epsilon;
                    for &(a, b) in ties {
                        let d = p[a] - p[b];
                        loss -= k
                            * (log_sigmoid(d + eps)
                                + log_sigmoid(eps - d)
                                + (-(-2.0 * eps).exp()).ln_1p());
                        let g = k * (sigmoid(d - eps) - sigmoid(-d - eps));
                        dp[a] += g;
                        dp[b] -= g;
                    }
                    for (t, g) in targets.iter().zip(dp) {
                        t.grad(model, ctx, g, grad);
                    }
                }
                Term::Instruction { target, weight } => {
                    let k = c * w.instruction * weight;
                    if k == 0.0 {
                        continue;
                    }
                    let base = self.baseline.as_ref().filter(|b| !b.rows.is_empty());
                    let lead =
                        target.predict(model, ctx) - base.map_or(0.0, |b| b.predict(model, ctx));
                    let slack = w.margin - lead;
                    if slack > 0.0 {
                        loss += k * slack;
                        target.grad(model, ctx, -k, grad);
                        if let Some(b) = base {
                            b.grad(model, ctx, k, grad);
                        }
                    }
                }
            }
        }
        loss
    }
}

/// Joint loss over a batch and its exact gradient with respect to the
/// model parameters.
pub fn loss_and_grad(
    model: &RewardModel,
    batch: &PreparedBatch,
    w: &LossWeights,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    let indices: Vec<usize> = (0..batch.len()).collect();
    let mut grad = Vec::new();
    let loss = batch.loss_and_grad_at(model, &indices, w, &mut grad);
    Ok((loss, grad))
}
