//! Balanced train/test split and distribution of training data across clients,
//! either IID or with per-client label skew α = |2P_k − 1|.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::EncodedSample;
use crate::ingest::Label;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("class {0:?} has no samples")]
    EmptyClass(Label),
    #[error("{clients} clients but only {available} samples available per client slot")]
    TooManyClients { clients: usize, available: usize },
    #[error("alpha={alpha} with {clients} clients needs {needed} {label:?} samples, pool has {available}")]
    InsufficientClassSamples {
        alpha: String,
        clients: usize,
        label: Label,
        needed: usize,
        available: usize,
    },
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("client count must be at least 1")]
    NoClients,
}

/// One client's local training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub samples: Vec<EncodedSample>,
    /// Target phishing fraction this client was built for.
    pub p_k: f64,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn phishing_count(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label == Label::Phishing)
            .count()
    }

    /// Observed phishing fraction (0 for an empty client).
    pub fn phishing_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.phishing_count() as f64 / self.samples.len() as f64
        }
    }
}

/// Client count, heterogeneity level and seed for one partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub clients: usize,
    pub alpha: f64,
    pub seed: u64,
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(clients: usize, alpha: f64, seed: u64) -> Result<Self, PartitionError> {
        if clients == 0 {
            return Err(PartitionError::NoClients);
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PartitionError::InvalidAlpha(alpha));
        }
        Ok(Self {
            clients,
            alpha,
            seed,
            train_fraction: 0.8,
        })
    }

    /// IID dealing when α = 0, label-skewed otherwise.
    pub fn partition(&self, train: &[EncodedSample]) -> Result<Vec<ClientDataset>, PartitionError> {
        if self.alpha == 0.0 {
            partition_iid(train, self.clients, self.seed)
        } else {
            partition_heterogeneous(train, self.clients, self.alpha, self.seed)
        }
    }
}

fn split_by_class(samples: &[EncodedSample]) -> (Vec<EncodedSample>, Vec<EncodedSample>) {
    samples.iter().cloned().partition(|s| s.label == Label::Phishing)
}

/// Subsamples the larger class to the smaller one's size and splits each class
/// 4:1 into train and test (train gets ⌊4n/5⌋ per class). Both outputs are
/// shuffled.
pub fn balance_and_split(
    phishing: &[EncodedSample],
    legitimate: &[EncodedSample],
    seed: u64,
) -> Result<(Vec<EncodedSample>, Vec<EncodedSample>), PartitionError> {
    if phishing.is_empty() {
        return Err(PartitionError::EmptyClass(Label::Phishing));
    }
    if legitimate.is_empty() {
        return Err(PartitionError::EmptyClass(Label::Legitimate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = phishing.len().min(legitimate.len());
    let n_train = n * 4 / 5;
    let mut train = Vec::with_capacity(2 * n_train);
    let mut test = Vec::with_capacity(2 * (n - n_train));
    for class in [phishing, legitimate] {
        let mut pool = class.to_vec();
        pool.shuffle(&mut rng);
        pool.truncate(n);
        test.extend(pool.split_off(n_train));
        train.extend(pool);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

/// Phishing fraction of a client with heterogeneity `alpha` whose majority class
/// is `majority`.
pub fn alpha_to_probability(alpha: f64, majority: Label) -> f64 {
    match majority {
        Label::Phishing => (1.0 + alpha) / 2.0,
        Label::Legitimate => (1.0 - alpha) / 2.0,
    }
}

/// Deals shuffled phishing samples, then shuffled legitimate samples,
/// round-robin to `k` clients, so sizes differ by at most one (extra samples
/// go to the lowest ids) and so do per-client phishing counts.
pub fn partition_iid(
    train: &[EncodedSample],
    k: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>, PartitionError> {
    if k == 0 {
        return Err(PartitionError::NoClients);
    }
    let (mut phish, mut legit) = split_by_class(train);
    let smaller = phish.len().min(legit.len());
    if k > smaller {
        return Err(PartitionError::TooManyClients {
            clients: k,
            available: smaller,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    phish.shuffle(&mut rng);
    legit.shuffle(&mut rng);
    let mut clients: Vec<ClientDataset> = (0..k)
        .map(|client_id| ClientDataset {
            client_id,
            samples: Vec::with_capacity(train.len() / k + 1),
            p_k: 0.5,
        })
        .collect();
    for (i, s) in phish.into_iter().chain(legit).enumerate() {
        clients[i % k].samples.push(s);
    }
    for c in &mut clients {
        c.samples.shuffle(&mut rng);
    }
    Ok(clients)
}

/// Label-skewed partition: exactly ⌊K/2⌋ or ⌈K/2⌉ clients are phishing-majority
/// (chosen at random), every client holds |train|/K samples (±1) and
/// round(P_k · n_k) of them are phishing. When those rounded targets do not add
/// up to the phishing pool, single-sample adjustments are made on the clients
/// whose rounding error is smallest, never exceeding one sample from P_k · n_k.
pub fn partition_heterogeneous(
    train: &[EncodedSample],
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>, PartitionError> {
    if k == 0 {
        return Err(PartitionError::NoClients);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PartitionError::InvalidAlpha(alpha));
    }
    if k > train.len() {
        return Err(PartitionError::TooManyClients {
            clients: k,
            available: train.len(),
        });
    }
    let (mut phish, mut legit) = split_by_class(train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    phish.shuffle(&mut rng);
    legit.shuffle(&mut rng);

    // Majority classes: half and half, the odd client decided by a coin.
    let mut n_phish_major = k / 2;
    if k % 2 == 1 && rand::Rng::gen_bool(&mut rng, 0.5) {
        n_phish_major += 1;
    }
    let mut majority: Vec<Label> = (0..k)
        .map(|i| {
            if i < n_phish_major {
                Label::Phishing
            } else {
                Label::Legitimate
            }
        })
        .collect();
    majority.shuffle(&mut rng);

    // Sizes: the remainder goes one-each to clients taken alternately from the
    // two groups, so neither group's total drifts.
    let base = train.len() / k;
    let mut sizes = vec![base; k];
    let (pm, lm): (Vec<usize>, Vec<usize>) = (0..k).partition(|&i| majority[i] == Label::Phishing);
    let mut interleaved: Vec<usize> = Vec::with_capacity(k);
    for i in 0..pm.len().max(lm.len()) {
        interleaved.extend(pm.get(i).copied());
        interleaved.extend(lm.get(i).copied());
    }
    for &c in interleaved.iter().take(train.len() % k) {
        sizes[c] += 1;
    }

    let p: Vec<f64> = majority
        .iter()
        .map(|&m| alpha_to_probability(alpha, m))
        .collect();
    let exact: Vec<f64> = (0..k).map(|i| p[i] * sizes[i] as f64).collect();
    let mut targets: Vec<usize> = exact.iter().map(|e| e.round() as usize).collect();

    let insufficient = |label, needed, available| PartitionError::InsufficientClassSamples {
        alpha: alpha.to_string(),
        clients: k,
        label,
        needed,
        available,
    };
    let mut total: usize = targets.iter().sum();
    while total != phish.len() {
        let grow = total < phish.len();
        // Candidate with the smallest resulting deviation that stays within one sample.
        let pick = (0..k)
            .filter(|&i| if grow { targets[i] < sizes[i] } else { targets[i] > 0 })
            .map(|i| {
                let next = if grow { targets[i] + 1 } else { targets[i] - 1 };
                ((next as f64 - exact[i]).abs(), i)
            })
            .filter(|&(dev, _)| dev <= 1.0 + 1e-9)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match pick {
            Some((_, i)) if grow => targets[i] += 1,
            Some((_, i)) => targets[i] -= 1,
            None if grow => return Err(insufficient(Label::Legitimate, train.len() - total, legit.len())),
            None => return Err(insufficient(Label::Phishing, total, phish.len())),
        }
        total = targets.iter().sum();
    }
    let legit_needed: usize = (0..k).map(|i| sizes[i] - targets[i]).sum();
    if legit_needed != legit.len() {
        return Err(insufficient(Label::Legitimate, legit_needed, legit.len()));
    }

    let mut phish = phish.into_iter();
    let mut legit = legit.into_iter();
    let mut clients = Vec::with_capacity(k);
    for i in 0..k {
        let mut samples: Vec<EncodedSample> = phish.by_ref().take(targets[i]).collect();
        samples.extend(legit.by_ref().take(sizes[i] - targets[i]));
        samples.shuffle(&mut rng);
        clients.push(ClientDataset {
            client_id: i,
            samples,
            p_k: p[i],
        });
    }
    Ok(clients)
}

#[derive(Debug, Serialize)]
struct ManifestEntry<'a> {
    client_id: usize,
    p_k: f64,
    phishing_fraction: f64,
    source_ids: Vec<&'a str>,
}

/// JSON listing client id → target P_k, observed fraction and sample source ids.
pub fn manifest_json(clients: &[ClientDataset]) -> String {
    let entries: Vec<ManifestEntry> = clients
        .iter()
        .map(|c| ManifestEntry {
            client_id: c.client_id,
            p_k: c.p_k,
            phishing_fraction: c.phishing_fraction(),
            source_ids: c.samples.iter().map(|s| s.source_id.as_str()).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("manifest serializes")
}
