//! Episodic meta-training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{Episode, TaskSource};
use crate::error::{Error, Result};
use crate::eval::query_mse;
use crate::model::{Forecaster, Trainable};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub seed: u64,
    /// Worker threads for the episodes of one meta-batch.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 500,
            batches_per_epoch: 50,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config {
                field: "lr",
                msg: format!("must be a non-negative number, got {}", self.lr),
            });
        }
        for (field, v) in [
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("jobs", self.jobs),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field,
                    msg: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }

    /// Tasks seen over a full run with one task per action per meta-batch.
    pub fn episode_budget(&self, actions: usize) -> usize {
        self.epochs * self.batches_per_epoch * actions
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Summed query loss of every meta-batch, in order.
    pub batch_losses: Vec<f64>,
    /// Mean of `batch_losses` within each epoch.
    pub epoch_losses: Vec<f64>,
    pub tasks_seen: usize,
    /// Validation query MSE after each epoch; empty without validation.
    #[serde(default)]
    pub val_losses: Vec<f64>,
    /// One-based epoch whose parameters the model holds after validated training.
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn losses_csv(&self) -> String {
        if self.val_losses.is_empty() {
            let mut s = String::from("epoch,loss\n");
            for (e, l) in self.epoch_losses.iter().enumerate() {
                s.push_str(&format!("{},{l:?}\n", e + 1));
            }
            return s;
        }
        let mut s = String::from("epoch,loss,val\n");
        for (e, (l, v)) in self.epoch_losses.iter().zip(&self.val_losses).enumerate() {
            s.push_str(&format!("{},{l:?},{v:?}\n", e + 1));
        }
        s
    }
}

fn batch_grads<M: Trainable>(
    model: &M,
    batch: &[Episode],
    pool: Option<&rayon::ThreadPool>,
) -> Vec<Result<(f64, Vec<Tensor3>)>> {
    match pool {
        Some(pool) => pool.install(|| batch.par_iter().map(|e| model.loss_and_grads(e)).collect()),
        None => batch.iter().map(|e| model.loss_and_grads(e)).collect(),
    }
}

/// Runs `epochs × batches_per_epoch` meta-batches of one task per action.
/// Each step minimises the sum of the episode losses of its batch. Episodes
/// are drawn from one seeded stream before any gradient work, and per-episode
/// gradients are summed in batch order, so results do not depend on `jobs`.
pub fn meta_train<M: Trainable, S: AsRef<str>>(
    model: &mut M,
    source: &TaskSource<'_>,
    actions: &[S],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    meta_train_with(model, source, actions, cfg, |_, _, _| {})
}

/// [`meta_train`] with a callback receiving `(epoch, mean batch loss, model)`.
pub fn meta_train_with<M: Trainable, S: AsRef<str>>(
    model: &mut M,
    source: &TaskSource<'_>,
    actions: &[S],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &M),
) -> Result<TrainReport> {
    cfg.validate()?;
    if actions.is_empty() {
        return Err(Error::invalid("meta-training needs at least one action"));
    }
    let pool = if cfg.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        model.params().values(),
    );
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut epoch_total = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let batch = source.meta_batch(actions, &mut rng)?;
            let results = batch_grads(&*model, &batch, pool.as_ref());
            let mut total = 0.0;
            let mut sum: Option<Vec<Tensor3>> = None;
            for (ep, res) in batch.iter().zip(results) {
                let (loss, grads) = res?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        what: "loss",
                        epoch: epoch + 1,
                        action: ep.action.clone(),
                        value: loss,
                    });
                }
                total += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let grads = sum.expect("batch is non-empty");
            opt.step(model.params_mut().values_mut(), &grads)?;
            report.batch_losses.push(total);
            report.tasks_seen += batch.len();
            epoch_total += total;
        }
        let mean = epoch_total / cfg.batches_per_epoch as f64;
        log::info!("epoch {} loss {mean:.6}", epoch + 1);
        on_epoch(epoch + 1, mean, &*model);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

/// [`meta_train`] that scores `validation` after every epoch and leaves the
/// model at the parameters of the epoch with the lowest query MSE. The
/// callback receives `(epoch, mean batch loss, validation MSE)`.
pub fn meta_train_validated<M: Trainable + Forecaster, S: AsRef<str>>(
    model: &mut M,
    source: &TaskSource<'_>,
    actions: &[S],
    cfg: &TrainConfig,
    validation: &[Episode],
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<TrainReport> {
    if validation.is_empty() {
        return Err(Error::invalid("validation needs at least one episode"));
    }
    let mut val_losses = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor3>)> = None;
    let mut failure = None;
    let mut report = meta_train_with(model, source, actions, cfg, |epoch, loss, m| {
        if failure.is_some() {
            return;
        }
        match query_mse(m, validation) {
            Ok(v) => {
                if best.as_ref().is_none_or(|(_, b, _)| v < *b) {
                    best = Some((epoch, v, m.params().values().to_vec()));
                }
                val_losses.push(v);
                on_epoch(epoch, loss, v);
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (epoch, _, params) = best.expect("at least one epoch");
    model.params_mut().values_mut().clone_from_slice(&params);
    report.val_losses = val_losses;
    report.best_epoch = Some(epoch);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.episode_budget(11), 275_000);
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field: "epochs", .. })));
        let cfg = TrainConfig {
            lr: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
