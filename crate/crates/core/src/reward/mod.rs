//! Learned reward models and their ensembles.

mod fit;
mod loss;

pub use fit::{fit, EpochLoss, FitConfig, FitReport};
pub use loss::{log_sigmoid, loss_and_grad, sigmoid, LossWeights, PreparedBatch, PreparedTarget};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{ContextEncoding, Target, CONTEXT_DIM};
use crate::gridworld::{feature, Action, Cell, FeatureVector, GridSpec, FEATURE_DIM};
use crate::store::EpisodeStore;

pub const ENSEMBLE_SIZE: usize = 5;
pub const HIDDEN_WIDTH: usize = 16;
/// Half-width of the indifference band in the tie-aware preference model.
pub const TIE_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Linear,
    /// One tanh hidden layer of [`HIDDEN_WIDTH`] units.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    Off,
    /// The context encoding is appended to the feature vector.
    Concat,
}

impl ContextMode {
    pub fn input_dim(self) -> usize {
        match self {
            ContextMode::Off => FEATURE_DIM,
            ContextMode::Concat => FEATURE_DIM + CONTEXT_DIM,
        }
    }
}

pub fn parameter_count(kind: ModelKind, mode: ContextMode) -> usize {
    let d = mode.input_dim();
    match kind {
        ModelKind::Linear => d,
        ModelKind::Mlp => HIDDEN_WIDTH * d + HIDDEN_WIDTH + HIDDEN_WIDTH + 1,
    }
}

/// r̂ over state-action features, optionally conditioned on context.
///
/// The linear parameters are the per-input weights; the weight on the
/// constant feature acts as the bias. MLP parameters are laid out as the
/// row-major hidden weights, hidden biases, output weights, output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub kind: ModelKind,
    pub context_mode: ContextMode,
    pub params: Vec<f64>,
}

impl RewardModel {
    pub fn zeros(kind: ModelKind, context_mode: ContextMode) -> Self {
        RewardModel {
            kind,
            context_mode,
            params: vec![0.0; parameter_count(kind, context_mode)],
        }
    }

    pub fn linear(weights: FeatureVector) -> Self {
        RewardModel {
            kind: ModelKind::Linear,
            context_mode: ContextMode::Off,
            params: weights.to_vec(),
        }
    }

    /// Random initialization.
    ///
    /// Linear weights on the always-on features start at zero; the remaining
    /// weights are drawn from Normal(0, `sigma`). MLP layers use
    /// Normal(0, 1/sqrt(fan_in)) weights and zero biases.
    pub fn init(
        kind: ModelKind,
        context_mode: ContextMode,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut m = RewardModel::zeros(kind, context_mode);
        let d = context_mode.input_dim();
        match kind {
            ModelKind::Linear => {
                let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
                for (i, p) in m.params.iter_mut().enumerate() {
                    let constant = i == feature::BIAS || i == feature::STEP;
                    let draw = normal.sample(rng);
                    if !constant {
                        *p = draw;
                    }
                }
            }
            ModelKind::Mlp => {
                let hidden = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite");
                let out = Normal::new(0.0, 1.0 / (HIDDEN_WIDTH as f64).sqrt()).expect("finite");
                for p in &mut m.params[..HIDDEN_WIDTH * d] {
                    *p = hidden.sample(rng);
                }
                let w2 = HIDDEN_WIDTH * d + HIDDEN_WIDTH;
                for p in &mut m.params[w2..w2 + HIDDEN_WIDTH] {
                    *p = out.sample(rng);
                }
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let expected = parameter_count(self.kind, self.context_mode);
        if self.params.len() != expected {
            return Err(Error::Spec(format!(
                "{:?}/{:?} model needs {expected} parameters, got {}",
                self.kind,
                self.context_mode,
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Spec("non-finite model parameter".into()));
        }
        Ok(())
    }

    fn input(&self, x: &FeatureVector, ctx: &ContextEncoding) -> [f64; FEATURE_DIM + CONTEXT_DIM] {
        let mut input = [0.0; FEATURE_DIM + CONTEXT_DIM];
        input[..FEATURE_DIM].copy_from_slice(x);
        if self.context_mode == ContextMode::Concat {
            input[FEATURE_DIM..].copy_from_slice(&ctx.0);
        }
        input
    }

    /// Reward of one feature row.
    pub fn eval(&self, x: &FeatureVector, ctx: &ContextEncoding) -> f64 {
        let input = self.input(x, ctx);
        let d = self.context_mode.input_dim();
        let input = &input[..d];
        match self.kind {
            ModelKind::Linear => self.params.iter().zip(input).map(|(w, x)| w * x).sum(),
            ModelKind::Mlp => {
                let (w1, rest) = self.params.split_at(HIDDEN_WIDTH * d);
                let (b1, rest) = rest.split_at(HIDDEN_WIDTH);
                let (w2, b2) = rest.split_at(HIDDEN_WIDTH);
                let mut out = b2[0];
                for j in 0..HIDDEN_WIDTH {
                    let row = &w1[j * d..(j + 1) * d];
                    let z: f64 = b1[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                    out += w2[j] * z.tanh();
                }
                out
            }
        }
    }

    /// Adds `scale * d eval / d params` into `grad`.
    pub fn accumulate_grad(
        &self,
        x: &FeatureVector,
        ctx: &ContextEncoding,
        scale: f64,
        grad: &mut [f64],
    ) {
        let input = self.input(x, ctx);
        let d = self.context_mode.input_dim();
        let input = &input[..d];
        match self.kind {
            ModelKind::Linear => {
                for (g, x) in grad.iter_mut().zip(input) {
                    *g += scale * x;
                }
            }
            ModelKind::Mlp => {
                let (w1, rest) = self.params.split_at(HIDDEN_WIDTH * d);
                let (b1, rest) = rest.split_at(HIDDEN_WIDTH);
                let w2 = &rest[..HIDDEN_WIDTH];
                let (gw1, grest) = grad.split_at_mut(HIDDEN_WIDTH * d);
                let (gb1, grest) = grest.split_at_mut(HIDDEN_WIDTH);
                let (gw2, gb2) = grest.split_at_mut(HIDDEN_WIDTH);
                gb2[0] += scale;
                for j in 0..HIDDEN_WIDTH {
                    let row = &w1[j * d..(j + 1) * d];
                    let z: f64 = b1[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                    let h = z.tanh();
                    gw2[j] += scale * h;
                    let dz = scale * w2[j] * (1.0 - h * h);
                    gb1[j] += dz;
                    for (g, x) in gw1[j * d..(j + 1) * d].iter_mut().zip(input) {
                        *g += dz * x;
                    }
                }
            }
        }
    }

    /// Mean reward over a set of rows.
    pub fn eval_rows(&self, rows: &[FeatureVector], ctx: &ContextEncoding) -> f64 {
        rows.iter().map(|x| self.eval(x, ctx)).sum::<f64>() / rows.len() as f64
    }

    /// Reward of a target: the mean over the state-actions it covers.
    pub fn predict(
        &self,
        store: &EpisodeStore,
        target: &Target,
        ctx: &ContextEncoding,
    ) -> Result<f64> {
        Ok(self.eval_rows(&store.resolve(target)?, ctx))
    }

    pub fn cell_reward(&self, spec: &GridSpec, cell: Cell, action: Action) -> f64 {
        self.eval(
            &crate::gridworld::cell_features(spec, cell, action),
            &ContextEncoding::default(),
        )
    }
}

/// P(A ≻ B) under the logistic model.
pub fn preference_likelihood(
    model: &RewardModel,
    store: &EpisodeStore,
    a: &Target,
    b: &Target,
    ctx: &ContextEncoding,
) -> Result<f64> {
    Ok(sigmoid(
        model.predict(store, a, ctx)? - model.predict(store, b, ctx)?,
    ))
}

/// Outcome probabilities for a reward difference `d = r(A) - r(B)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceProbs {
    pub a_better: f64,
    pub tie: f64,
    pub b_better: f64,
}

/// Tie-aware logistic model: `P(A ≻ B) = σ(d − ε)`, `P(B ≻ A) = σ(−d − ε)`,
/// `P(=)` takes the rest.
pub fn tie_aware_probs(d: f64, epsilon: f64) -> PreferenceProbs {
    let a_better = sigmoid(d - epsilon);
    let b_better = sigmoid(-d - epsilon);
    PreferenceProbs {
        a_better,
        tie: (log_sigmoid(d + epsilon) + log_sigmoid(epsilon - d)).exp()
            * (1.0 - (-2.0 * epsilon).exp()),
        b_better,
    }
}

/// Independently initialized models sharing kind and context mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<RewardModel>,
    pub seed: u64,
    /// Incremented by every fit.
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub kind: ModelKind,
    pub context_mode: ContextMode,
    pub size: usize,
    pub init_sigma: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            kind: ModelKind::Linear,
            context_mode: ContextMode::Off,
            size: ENSEMBLE_SIZE,
            init_sigma: 0.5,
        }
    }
}

impl Ensemble {
    pub fn new(cfg: &EnsembleConfig, seed: u64) -> Result<Self> {
        if cfg.size == 0 {
            return Err(Error::Spec("ensemble needs at least one member".into()));
        }
        let members = (0..cfg.size)
            .map(|i| {
                let mut rng = member_rng(seed, i as u64, 0);
                RewardModel::init(cfg.kind, cfg.context_mode, cfg.init_sigma, &mut rng)
            })
            .collect();
        Ok(Ensemble {
            members,
            seed,
            version: 0,
        })
    }

    pub fn from_members(members: Vec<RewardModel>) -> Result<Self> {
        let e = Ensemble {
            members,
            seed: 0,
            version: 0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .members
            .first()
            .ok_or_else(|| Error::Spec("ensemble needs at least one member".into()))?;
        for m in &self.members {
            m.validate()?;
            if m.kind != first.kind || m.context_mode != first.context_mode {
                return Err(Error::Spec(
                    "ensemble members differ in kind or context mode".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn member_predictions(
        &self,
        store: &EpisodeStore,
        target: &Target,
        ctx: &ContextEncoding,
    ) -> Result<Vec<f64>> {
        let rows = store.resolve(target)?;
        Ok(self
            .members
            .iter()
            .map(|m| m.eval_rows(&rows, ctx))
            .collect())
    }

    pub fn predict(
        &self,
        store: &EpisodeStore,
        target: &Target,
        ctx: &ContextEncoding,
    ) -> Result<f64> {
        Ok(mean(&self.member_predictions(store, target, ctx)?))
    }

    /// Population standard deviation of the member predictions.
    pub fn uncertainty(
        &self,
        store: &EpisodeStore,
        target: &Target,
        ctx: &ContextEncoding,
    ) -> Result<f64> {
        Ok(population_std(
            &self.member_predictions(store, target, ctx)?,
        ))
    }

    /// Ensemble-mean reward of a state-action under the default context.
    pub fn cell_reward(&self, spec: &GridSpec, cell: Cell, action: Action) -> f64 {
        let x = crate::gridworld::cell_features(spec, cell, action);
        let ctx = ContextEncoding::default();
        self.members.iter().map(|m| m.eval(&x, &ctx)).sum::<f64>() / self.members.len() as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT,
            ensemble: self.clone(),
        };
        let text = serde_json::to_string_pretty(&ck).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ensemble::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT,
            ensemble: self.clone(),
        })
        .expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: 0,
            message: format!("checkpoint: {e}"),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "checkpoint format {} is not {CHECKPOINT_FORMAT}",
                ck.format
            )));
        }
        ck.ensemble.validate()?;
        Ok(ck.ensemble)
    }

    /// True when every parameter matches bit for bit.
    pub fn bit_equal(&self, other: &Ensemble) -> bool {
        self.members.len() == other.members.len()
            && self.members.iter().zip(&other.members).all(|(a, b)| {
                a.kind == b.kind
                    && a.context_mode == b.context_mode
                    && a.params.len() == b.params.len()
                    && a.params
                        .iter()
                        .zip(&b.params)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: u32,
    ensemble: Ensemble,
}

pub(crate) fn member_rng(seed: u64, member: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ member.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream);
    rng
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Exactly 0 for constant input, where the rounded mean would leave a residue.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
