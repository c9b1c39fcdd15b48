//! Parameter-server simulation: client selection, local training, FedAvg
//! aggregation and per-round evaluation, plus centralized and standalone
//! baselines.

mod baseline;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{embed_batch, EmbeddingTable, EncodedSample};
use crate::nn::{
    adam_step, backward, batch_loss, evaluate, forward_batch, AdamState, Checkpoint, ModelError,
    ModelParams, ParamVector,
};
use crate::partition::ClientDataset;

pub use baseline::{
    train_centralized, train_sequential, train_standalone, validation_split, BaselineResult,
};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("cannot select {selected} of {clients} clients")]
    InvalidSelection { clients: usize, selected: usize },
    #[error("client {0} has no samples")]
    EmptyClient(usize),
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("update from client {client} has length {actual}, expected {expected}")]
    LengthMismatch {
        client: usize,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Optimizer settings shared by local training and the baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Local epochs per federated round.
    pub local_epochs: usize,
    /// Early-stopping patience for the baselines.
    pub patience: usize,
    /// Epoch cap for the baselines (one epoch per reported round).
    pub max_epochs: usize,
    /// Rescale each batch gradient to at most this L2 norm; off by default and
    /// meant only for diagnosing divergence.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 16,
            local_epochs: 1,
            patience: 10,
            max_epochs: 50,
            clip_norm: None,
        }
    }
}

/// Independent random streams of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Selection = 2,
    Shuffle = 3,
    Split = 4,
    Partition = 5,
    Validation = 6,
    Corpus = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream identified by `(seed, stream, client, round)`, so results
/// never depend on the order in which clients are executed.
pub fn derive_seed(seed: u64, stream: Stream, client: u64, round: u64) -> u64 {
    [stream as u64, client, round]
        .into_iter()
        .fold(splitmix64(seed), |acc, x| splitmix64(acc ^ splitmix64(x)))
}

pub fn stream_rng(seed: u64, stream: Stream, client: u64, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, client, round))
}

/// `k_selected` distinct ids from `0..k`, uniformly without replacement, sorted.
pub fn select_clients(
    k: usize,
    k_selected: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, FedError> {
    if k_selected == 0 || k_selected > k {
        return Err(FedError::InvalidSelection {
            clients: k,
            selected: k_selected,
        });
    }
    let mut ids = index::sample(rng, k, k_selected).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// One shuffled pass over `samples` in mini-batches; returns the mean batch loss.
pub fn train_epoch(
    params: &mut ModelParams,
    samples: &[EncodedSample],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    // Canonical order first, so an epoch depends on the sample set and the
    // stream only, not on how the caller happened to store the samples.
    let mut order: Vec<&EncodedSample> = samples.iter().collect();
    order.sort_by(|a, b| a.source_id.cmp(&b.source_id).then_with(|| a.indices.cmp(&b.indices)));
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(cfg.batch.max(1)) {
        let labels: Vec<u8> = chunk.iter().map(|s| s.label.as_u8()).collect();
        let cache = forward_batch(embed_batch(chunk, table)?, params)?;
        total += batch_loss(&cache, &labels);
        let mut grad = backward(&cache, &labels, params)?;
        if let Some(max) = cfg.clip_norm {
            let norm = grad.norm();
            if norm > max {
                grad.as_mut_slice().iter_mut().for_each(|g| *g *= max / norm);
            }
        }
        adam_step(params.values_mut(), grad.as_slice(), adam, cfg.lr)?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// A client's contribution to one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client_id: usize,
    /// Trained local parameters minus the global parameters it started from.
    pub delta: ParamVector,
    pub n_k: usize,
    pub mean_loss: f64,
    /// The trained local parameters themselves, when available; a lone update
    /// carrying them is applied exactly.
    pub local: Option<ParamVector>,
}

/// Trains a copy of `global` on the client's data with a fresh optimizer and
/// returns the parameter delta. Shuffling uses the `(seed, client, round)` stream.
pub fn local_train(
    client: &ClientDataset,
    global: &ModelParams,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    seed: u64,
    round: usize,
) -> Result<LocalUpdate, FedError> {
    if client.is_empty() {
        return Err(FedError::EmptyClient(client.client_id));
    }
    let mut local = global.clone();
    let mut adam = AdamState::new(global.values().len());
    let mut rng = stream_rng(seed, Stream::Shuffle, client.client_id as u64, round as u64);
    let mut loss = 0.0;
    for _ in 0..cfg.local_epochs {
        loss = train_epoch(&mut local, &client.samples, table, cfg, &mut adam, &mut rng)?;
    }
    let delta = local
        .values()
        .iter()
        .zip(global.values())
        .map(|(l, g)| l - g)
        .collect();
    Ok(LocalUpdate {
        client_id: client.client_id,
        delta: ParamVector(delta),
        n_k: client.len(),
        mean_loss: loss,
        local: Some(local.into_vector()),
    })
}

/// `G + Σ_k (n_k / Σn) · Δ_k`, summed in ascending client-id order.
///
/// A single update has weight exactly one, so the result is that client's local
/// model; when the update carries it, it is returned bit-for-bit, because
/// `G + (L − G)` can differ from `L` in the last place and the optimizer
/// amplifies such differences over later rounds.
pub fn fedavg_aggregate(global: &ParamVector, updates: &[LocalUpdate]) -> Result<ParamVector, FedError> {
    if updates.is_empty() {
        return Err(FedError::EmptyUpdateSet);
    }
    for u in updates {
        if u.delta.len() != global.len() {
            return Err(FedError::LengthMismatch {
                client: u.client_id,
                expected: global.len(),
                actual: u.delta.len(),
            });
        }
    }
    if let [LocalUpdate { local: Some(l), .. }] = updates {
        if l.len() == global.len() {
            return Ok(l.clone());
        }
    }
    let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let n_total: usize = ordered.iter().map(|u| u.n_k).sum();
    let mut sum = vec![0.0; global.len()];
    for u in ordered {
        let w = u.n_k as f64 / n_total as f64;
        for (s, d) in sum.iter_mut().zip(u.delta.as_slice()) {
            *s += w * d;
        }
    }
    Ok(ParamVector(
        global.as_slice().iter().zip(&sum).map(|(g, s)| g + s).collect(),
    ))
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub accuracy: f64,
    /// Mean training loss of the round; absent once a baseline has stopped early.
    pub mean_loss: Option<f64>,
}

/// Global model, round counter, selection stream and history.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ModelParams,
    pub round: usize,
    pub seed: u64,
    rng: ChaCha8Rng,
    pub history: Vec<RoundRecord>,
}

impl ServerState {
    pub fn new(global: ModelParams, seed: u64) -> Self {
        Self {
            global,
            round: 0,
            seed,
            rng: stream_rng(seed, Stream::Selection, 0, 0),
            history: Vec::new(),
        }
    }
}

/// Select → train each selected client from the same G_t → aggregate →
/// evaluate on `test`.
pub fn run_round(
    server: &mut ServerState,
    clients: &[ClientDataset],
    k_selected: usize,
    test: &[EncodedSample],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<RoundRecord, FedError> {
    let round = server.round + 1;
    let selected = select_clients(clients.len(), k_selected, &mut server.rng)?;
    let global = &server.global;
    let updates = selected
        .par_iter()
        .map(|&id| local_train(&clients[id], global, table, cfg, server.seed, round))
        .collect::<Result<Vec<_>, _>>()?;
    let next = fedavg_aggregate(&global.flatten(), &updates)?;
    server.global = ModelParams::unflatten(*global.arch(), next)?;
    let accuracy = evaluate(&server.global, test, table)?;
    let mean_loss = updates.iter().map(|u| u.mean_loss).sum::<f64>() / updates.len() as f64;
    let record = RoundRecord {
        round,
        selected,
        accuracy,
        mean_loss: Some(mean_loss),
    };
    server.round = round;
    server.history.push(record.clone());
    Ok(record)
}

/// Where and how often to save the global model during a run.
#[derive(Debug, Clone)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    pub every: usize,
}

/// Runs `rounds` rounds, checkpointing per `policy`; returns the full history.
pub fn run_federated(
    server: &mut ServerState,
    clients: &[ClientDataset],
    k_selected: usize,
    test: &[EncodedSample],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    rounds: usize,
    policy: Option<&CheckpointPolicy>,
) -> Result<Vec<RoundRecord>, FedError> {
    for _ in 0..rounds {
        run_round(server, clients, k_selected, test, table, cfg)?;
        if let Some(p) = policy {
            if p.every > 0 && server.round % p.every == 0 {
                let path = p.dir.join(format!("global_round_{:04}.json", server.round));
                Checkpoint::new(&server.global, server.round).save(&path)?;
            }
        }
    }
    Ok(server.history.clone())
}

pub const ROUND_CSV_HEADER: &str = "round,accuracy,mean_loss,selected_ids";

/// Round log as CSV text. Floats use the shortest round-trip representation.
pub fn rounds_to_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(ROUND_CSV_HEADER);
    out.push('\n');
    for r in records {
        let ids: Vec<String> = r.selected.iter().map(usize::to_string).collect();
        let loss = r.mean_loss.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.round, r.accuracy, loss, ids.join(";"));
    }
    out
}

pub fn write_round_csv(path: &Path, records: &[RoundRecord]) -> Result<(), FedError> {
    std::fs::write(path, rounds_to_csv(records)).map_err(|source| FedError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a round log written by [`rounds_to_csv`].
pub fn parse_round_csv(text: &str) -> Result<Vec<RoundRecord>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(ROUND_CSV_HEADER) {
        return Err("missing round-log header".into());
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.splitn(4, ',').collect();
            if f.len() != 4 {
                return Err(format!("bad round-log line: {line}"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{line}: {e}"));
            Ok(RoundRecord {
                round: f[0].parse().map_err(|e| format!("{line}: {e}"))?,
                accuracy: num(f[1])?,
                mean_loss: if f[2].is_empty() { None } else { Some(num(f[2])?) },
                selected: f[3]
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|e| format!("{line}: {e}")))
                    .collect::<Result<_, _>>()?,
            })
        })
        .collect()
}
