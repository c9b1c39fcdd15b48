//! Non-federated baselines: centralized training on the whole train set and
//! standalone training on one client's data, both with early stopping.

use rand::seq::SliceRandom;

use super::{stream_rng, train_epoch, FedError, RoundRecord, Stream, TrainConfig};
use crate::embedding::{EmbeddingTable, EncodedSample};
use crate::ingest::Label;
use crate::nn::{evaluate, mean_loss, AdamState, ModelParams, ParamVector};
use crate::partition::ClientDataset;

/// Outcome of a baseline run.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    /// Parameters with the lowest validation loss.
    pub params: ModelParams,
    /// One record per epoch up to the epoch cap; epochs after an early stop
    /// report the restored best model and carry no loss.
    pub history: Vec<RoundRecord>,
    pub best_epoch: usize,
    /// Epoch at which patience ran out, if it did.
    pub stopped_at: Option<usize>,
}

impl BaselineResult {
    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(0.0, |r| r.accuracy)
    }
}

/// Holds out ⌈fraction · n_c⌉ samples of each class c for validation, leaving at
/// least one sample of every class in the training part.
pub fn validation_split(
    samples: &[EncodedSample],
    fraction: f64,
    seed: u64,
    client: u64,
) -> (Vec<EncodedSample>, Vec<EncodedSample>) {
    let mut rng = stream_rng(seed, Stream::Validation, client, 0);
    let mut train = Vec::with_capacity(samples.len());
    let mut val = Vec::new();
    for label in [Label::Phishing, Label::Legitimate] {
        let mut class: Vec<EncodedSample> =
            samples.iter().filter(|s| s.label == label).cloned().collect();
        class.shuffle(&mut rng);
        let n = class.len();
        let n_val = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
        val.extend(class.drain(..n_val));
        train.extend(class);
    }
    train.shuffle(&mut rng);
    (train, val)
}

fn run_with_early_stopping(
    stream_client: usize,
    samples: &[EncodedSample],
    test: &[EncodedSample],
    table: &EmbeddingTable,
    init: &ModelParams,
    cfg: &TrainConfig,
    seed: u64,
    selected: Vec<usize>,
) -> Result<BaselineResult, FedError> {
    let (train, val) = validation_split(samples, 0.1, seed, stream_client as u64);
    let mut params = init.clone();
    let mut adam = AdamState::new(params.values().len());
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut wait = 0usize;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut stopped_at = None;
    for epoch in 1..=cfg.max_epochs {
        let mut rng = stream_rng(seed, Stream::Shuffle, stream_client as u64, epoch as u64);
        let loss = train_epoch(&mut params, &train, table, cfg, &mut adam, &mut rng)?;
        history.push(RoundRecord {
            round: epoch,
            selected: selected.clone(),
            accuracy: evaluate(&params, test, table)?,
            mean_loss: Some(loss),
        });
        // Without a validation set every epoch counts as an improvement.
        let monitored = if val.is_empty() {
            f64::NEG_INFINITY
        } else {
            mean_loss(&params, &val, table)?
        };
        if monitored < best.0 || val.is_empty() {
            best = (monitored, params.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                stopped_at = Some(epoch);
                break;
            }
        }
    }
    let (_, params, best_epoch) = best;
    if stopped_at.is_some() {
        let restored = evaluate(&params, test, table)?;
        for epoch in history.len() + 1..=cfg.max_epochs {
            history.push(RoundRecord {
                round: epoch,
                selected: selected.clone(),
                accuracy: restored,
                mean_loss: None,
            });
        }
    }
    Ok(BaselineResult {
        params,
        history,
        best_epoch,
        stopped_at,
    })
}

/// Trains on the whole train set (10% held out for early stopping), evaluating
/// on `test` after every epoch.
pub fn train_centralized(
    train: &[EncodedSample],
    test: &[EncodedSample],
    table: &EmbeddingTable,
    init: &ModelParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BaselineResult, FedError> {
    if train.is_empty() {
        return Err(FedError::EmptyClient(0));
    }
    run_with_early_stopping(0, train, test, table, init, cfg, seed, Vec::new())
}

/// Centralized training restricted to one client's data.
pub fn train_standalone(
    client: &ClientDataset,
    test: &[EncodedSample],
    table: &EmbeddingTable,
    init: &ModelParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BaselineResult, FedError> {
    if client.is_empty() {
        return Err(FedError::EmptyClient(client.client_id));
    }
    run_with_early_stopping(
        client.client_id,
        &client.samples,
        test,
        table,
        init,
        cfg,
        seed,
        vec![client.client_id],
    )
}

/// Centralized training on all of `train` for `epochs` epochs, restarting the
/// optimizer every epoch and shuffling with the stream a single federated client
/// 0 would use in the same round; returns the parameters after each epoch.
/// This is the sequential trajectory a one-client federation must reproduce.
pub fn train_sequential(
    train: &[EncodedSample],
    table: &EmbeddingTable,
    init: &ModelParams,
    cfg: &TrainConfig,
    seed: u64,
    epochs: usize,
) -> Result<Vec<ParamVector>, FedError> {
    let mut params = init.clone();
    let mut out = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut adam = AdamState::new(params.values().len());
        let mut rng = stream_rng(seed, Stream::Shuffle, 0, epoch as u64);
        train_epoch(&mut params, train, table, cfg, &mut adam, &mut rng)?;
        out.push(params.flatten());
    }
    Ok(out)
}
