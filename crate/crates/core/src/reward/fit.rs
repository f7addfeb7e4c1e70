use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LossWeights, PreparedBatch};
use super::{member_rng, Ensemble, RewardModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lr: f64,
    pub epochs: usize,
    /// `0` means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Fit each member on its own resample (with replacement) of the data.
    pub bootstrap: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lr: 0.1,
            epochs: 200,
            batch_size: 0,
            seed: 0,
            bootstrap: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub member: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Member-major, one entry per member and epoch.
    pub trace: Vec<EpochLoss>,
}

impl FitReport {
    pub fn member_trace(&self, member: usize) -> Vec<f64> {
        self.trace
            .iter()
            .filter(|e| e.member == member)
            .map(|e| e.loss)
            .collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "member,epoch,loss")?;
        for e in &self.trace {
            writeln!(out, "{},{},{}", e.member, e.epoch, e.loss)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))?;
        Ok(())
    }
}

/// Maximum step halvings per full-batch epoch before the step is dropped.
const MAX_HALVINGS: usize = 40;

/// Gradient descent on every member, each with its own shuffling stream.
///
/// Steps are `lr * grad / n` for a batch of `n` instances. Full-batch runs
/// halve the step size whenever a step would increase the loss, so their
/// trace never increases. Members are fitted on separate threads; results do
/// not depend on scheduling.
pub fn fit(
    ensemble: &Ensemble,
    data: &PreparedBatch,
    weights: &LossWeights,
    cfg: &FitConfig,
) -> Result<(Ensemble, FitReport)> {
    weights.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("fit needs a nonempty dataset".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::Spec(format!(
            "learning rate {} must be positive",
            cfg.lr
        )));
    }
    if cfg.epochs == 0 {
        return Ok((ensemble.clone(), FitReport::default()));
    }
    let results: Vec<Result<(RewardModel, Vec<f64>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = ensemble
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| s.spawn(move || fit_member(m, i, data, weights, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("member fit thread panicked"))
            .collect()
    });
    let mut members = Vec::with_capacity(results.len());
    let mut trace = Vec::new();
    for (member, r) in results.into_iter().enumerate() {
        let (model, losses) = r?;
        trace.extend(
            losses
                .into_iter()
                .enumerate()
                .map(|(epoch, loss)| EpochLoss {
                    member,
                    epoch,
                    loss,
                }),
        );
        members.push(model);
    }
    Ok((
        Ensemble {
            members,
            seed: ensemble.seed,
            version: ensemble.version + 1,
        },
        FitReport { trace },
    ))
}

fn fit_member(
    start: &RewardModel,
    index: usize,
    data: &PreparedBatch,
    weights: &LossWeights,
    cfg: &FitConfig,
) -> Result<(RewardModel, Vec<f64>)> {
    let mut model = start.clone();
    let n = data.len();
    let mut order: Vec<usize> = if cfg.bootstrap {
        let mut rng = member_rng(cfg.seed, index as u64, 2);
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut grad = Vec::new();
    if cfg.batch_size == 0 || cfg.batch_size >= n {
        let mut lr = cfg.lr;
        let mut loss = data.loss_and_grad_at(&model, &order, weights, &mut grad);
        let mut trial_grad = Vec::new();
        for epoch in 0..cfg.epochs {
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let mut trial = model.clone();
                for (p, g) in trial.params.iter_mut().zip(&grad) {
                    *p -= lr * g / n as f64;
                }
                let trial_loss = data.loss_and_grad_at(&trial, &order, weights, &mut trial_grad);
                if trial_loss.is_finite() && trial_loss <= loss {
                    model = trial;
                    loss = trial_loss;
                    std::mem::swap(&mut grad, &mut trial_grad);
                    accepted = true;
                    break;
                }
                lr *= 0.5;
            }
            if !accepted && !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            losses.push(loss);
        }
    } else {
        let mut rng = member_rng(cfg.seed, index as u64, 1);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let loss = data.loss_and_grad_at(&model, chunk, weights, &mut grad);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Divergence { epoch });
                }
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= cfg.lr * g / chunk.len() as f64;
                }
                total += loss;
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            losses.push(total);
        }
    }
    Ok((model, losses))
}
