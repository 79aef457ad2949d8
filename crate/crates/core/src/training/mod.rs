//! Averaged mini-batch SGD with a step-decayed learning rate.
//!
//! Each epoch shuffles the order of dialogs (never the utterances inside a
//! dialog, so context windows stay intact), walks the windows in batches,
//! and takes one plain SGD step per batch. From `average_start_epoch` on,
//! every post-step iterate enters an arithmetic running average, which is
//! what evaluation and the final checkpoint use.

mod config;
mod pipeline;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, PreparedDialog, PreparedUtterance};
use crate::tensor::{Gradients, ParamStore, Scalar};

pub use config::{lr_at, Precision, TrainConfig};
pub use pipeline::{prepare_corpus, train_on_corpus, ModelBundle, PreparedCorpus, TrainedModel};

/// Raw SGD parameters plus the running average of iterates.
#[derive(Clone, Debug)]
pub struct AveragedState<T> {
    pub params: ParamStore<T>,
    sum: ParamStore<f64>,
    count: usize,
}

impl<T: Scalar> AveragedState<T> {
    pub fn new(params: ParamStore<T>) -> Self {
        let mut sum: ParamStore<f64> = params.cast();
        for id in sum.ids().collect::<Vec<_>>() {
            sum.get_mut(id).data_mut().fill(0.0);
        }
        AveragedState {
            params,
            sum,
            count: 0,
        }
    }

    /// Number of iterates in the average.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Arithmetic mean of the recorded iterates, or `None` before the first.
    pub fn average(&self) -> Option<ParamStore<T>> {
        if self.count == 0 {
            return None;
        }
        let mut avg: ParamStore<T> = self.params.clone();
        let n = self.count as f64;
        for id in self.sum.ids() {
            let src = self.sum.get(id).data();
            for (a, s) in avg.get_mut(id).data_mut().iter_mut().zip(src) {
                *a = T::of(s / n);
            }
        }
        Some(avg)
    }

    /// The average once averaging has begun, otherwise the raw parameters.
    pub fn eval_params(&self) -> ParamStore<T> {
        self.average().unwrap_or_else(|| self.params.clone())
    }

    fn record(&mut self) {
        for id in self.sum.ids().collect::<Vec<_>>() {
            let src = self.params.get(id).data();
            for (s, p) in self.sum.get_mut(id).data_mut().iter_mut().zip(src) {
                *s += p.as_f64();
            }
        }
        self.count += 1;
    }
}

/// `params ← params − lr·grads`; the new iterate is added to the average
/// when `average` is set. Non-finite gradients abort without touching the
/// state.
pub fn asgd_step<T: Scalar>(
    state: &mut AveragedState<T>,
    grads: &Gradients<T>,
    lr: T,
    average: bool,
) -> Result<()> {
    for (id, g) in grads.iter() {
        if g.shape() != state.params.get(id).shape() {
            return Err(Error::shape(
                "asgd_step",
                format!("gradient for {} has the wrong shape", state.params.name(id)),
            ));
        }
        if !g.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient for {}",
                state.params.name(id)
            )));
        }
    }
    for (id, g) in grads.iter() {
        let p = state.params.get_mut(id);
        for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    if average {
        state.record();
    }
    Ok(())
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Parameter updates performed so far.
    pub updates: usize,
    /// Rate the next update will use.
    pub lr: f64,
    /// Mean batch loss over the epoch (epoch 0: loss of the initial model).
    pub train_loss: f64,
    pub val_acc: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tupdates\tlr\ttrainLoss\tvalAcc";
}

/// Shortest decimal form of `lr` rounded to 12 significant digits, so the
/// schedule prints as `0.0891` rather than its binary neighbour.
pub fn format_lr(lr: f64) -> String {
    let rounded: f64 = format!("{lr:.11e}")
        .parse()
        .expect("formatted float parses");
    rounded.to_string()
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{:.6}\t{:.4}",
            self.epoch,
            self.updates,
            format_lr(self.lr),
            self.train_loss,
            self.val_acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Evaluation parameters after the last epoch.
    pub model: Model<T>,
    /// Evaluation parameters of the epoch with the best validation accuracy.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Every context window of `dialogs`, in order.
pub fn all_windows<T>(dialogs: &[PreparedDialog<T>], n: usize) -> Vec<&[PreparedUtterance<T>]> {
    dialogs.iter().flat_map(|d| d.windows(n)).collect()
}

/// Fraction of windows whose target is predicted correctly.
pub fn accuracy<T: Scalar>(
    model: &Model<T>,
    dialogs: &[PreparedDialog<T>],
    n: usize,
) -> Result<f64> {
    let windows = all_windows(dialogs, n);
    if windows.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for w in &windows {
        if model.predict(w)?.label == w.last().expect("non-empty window").label {
            correct += 1;
        }
    }
    Ok(correct as f64 / windows.len() as f64)
}

fn mean_loss<T: Scalar>(
    model: &Model<T>,
    windows: &[&[PreparedUtterance<T>]],
    batch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in windows.chunks(batch) {
        total += model
            .batch_loss(model.params(), chunk, None, None)?
            .as_f64()
            * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Trains `model` in place of its initial parameters. `on_epoch` sees each
/// log line as soon as it is produced (epoch 0 describes the initial model).
pub fn train<T: Scalar>(
    model: Model<T>,
    train_set: &[PreparedDialog<T>],
    valid_set: &[PreparedDialog<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let n = cfg.context_len;
    if all_windows(train_set, n).is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if all_windows(valid_set, n).is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let config = model.config().clone();
    let embed = model.embedding_id();
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let mut log = Vec::with_capacity(cfg.epochs + 1);

    let first = EpochLog {
        epoch: 0,
        updates: 0,
        lr: cfg.lr_at(0),
        train_loss: mean_loss(&model, &all_windows(train_set, n), cfg.batch_size)?,
        val_acc: accuracy(&model, valid_set, n)?,
    };
    on_epoch(&first);
    let mut best = (first.val_acc, 0, model.params().clone());
    log.push(first);

    let mut state = AveragedState::new(model.params().clone());
    let mut grads = Gradients::zeros_like(&state.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut updates = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let windows: Vec<&[PreparedUtterance<T>]> = order
            .iter()
            .flat_map(|&d| train_set[d].windows(n))
            .collect();
        let averaging = cfg.averaging && epoch >= cfg.average_start_epoch;
        let mut loss_sum = 0.0;
        for batch in windows.chunks(cfg.batch_size) {
            grads.fill_zero();
            let loss = model.batch_loss(&state.params, batch, Some(&mut rng), Some(&mut grads))?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at update {updates}"
                )));
            }
            loss_sum += loss.as_f64() * batch.len() as f64;
            if let (Some(id), false) = (embed, cfg.tune_embeddings) {
                grads.get_mut(id).data_mut().fill(T::zero());
            }
            if cfg.weight_decay > 0.0 {
                let wd = T::of(cfg.weight_decay);
                for (id, _, p) in state.params.iter() {
                    for (g, &x) in grads.get_mut(id).data_mut().iter_mut().zip(p.data()) {
                        *g += wd * x;
                    }
                }
            }
            if cfg.grad_clip > 0.0 {
                let norm = grads.l2_norm().as_f64();
                if norm > cfg.grad_clip {
                    grads.scale(T::of(cfg.grad_clip / norm));
                }
            }
            asgd_step(&mut state, &grads, T::of(cfg.lr_at(updates)), averaging).map_err(
                |e| match e {
                    Error::Divergence(msg) => {
                        Error::Divergence(format!("{msg} at update {updates} (epoch {epoch})"))
                    }
                    other => other,
                },
            )?;
            updates += 1;
        }
        let eval = Model::from_params(config.clone(), state.eval_params())?;
        let entry = EpochLog {
            epoch,
            updates,
            lr: cfg.lr_at(updates),
            train_loss: loss_sum / windows.len() as f64,
            val_acc: accuracy(&eval, valid_set, n)?,
        };
        on_epoch(&entry);
        if entry.val_acc > best.0 {
            best = (entry.val_acc, epoch, eval.params().clone());
        }
        log.push(entry);
    }

    Ok(TrainOutcome {
        model: Model::from_params(config.clone(), state.eval_params())?,
        best: Model::from_params(config, best.2)?,
        best_epoch: best.1,
        log,
    })
}

#[cfg(test)]
mod tests;
