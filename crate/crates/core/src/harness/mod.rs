//! Experiment orchestration: configuration, dataset preparation, seed sweeps,
//! the client-count × heterogeneity grid, summaries and plot data.

mod config;
mod corpus;

pub use config::{grid_selected, ExperimentConfig, Mode, SyntheticConfig, GRID_ALPHAS, GRID_CLIENTS};
pub use corpus::{gen_synthetic_corpus, synthetic_embedding, topic_pools, CorpusSpec};

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    dedupe, encode, load_embedding, EmbeddingTable, EncodedSample, MAX_LEN, MIN_LEN,
};
use crate::federated::{
    derive_seed, parse_round_csv, rounds_to_csv, run_federated, train_centralized,
    train_standalone, CheckpointPolicy, FedError, RoundRecord, ServerState, Stream, TrainConfig,
};
use crate::ingest::{ingest_dir, Document, Label};
use crate::nn::init_params;
use crate::partition::{balance_and_split, manifest_json, PartitionError, SplitSpec};
use crate::text::TextPipeline;

/// Mean final accuracy below which a run is flagged as not converged.
pub const NON_CONVERGENCE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("cannot read {path}: {reason}")]
    DataUnreadable { path: PathBuf, reason: String },
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Training(#[from] FedError),
}

impl HarnessError {
    /// Process exit code: 1 for configuration errors, 2 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigInvalid { .. } => 1,
            _ => 2,
        }
    }
}

fn unreadable(path: &Path, e: impl ToString) -> HarnessError {
    HarnessError::DataUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| unreadable(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| unreadable(path, e))
}

/// Preprocesses and encodes documents, dropping too-short texts and duplicates.
/// Returns the samples and the number rejected for length.
pub fn encode_documents(
    docs: &[Document],
    pipeline: &TextPipeline,
    table: &EmbeddingTable,
) -> (Vec<EncodedSample>, usize) {
    let mut rejected = 0;
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        match encode(&pipeline.preprocess(d), table, MAX_LEN, MIN_LEN).sample() {
            Some(s) => out.push(s),
            None => rejected += 1,
        }
    }
    (dedupe(out), rejected)
}

/// Encoded samples of both classes plus the embedding they index into.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub table: EmbeddingTable,
    pub phishing: Vec<EncodedSample>,
    pub legitimate: Vec<EncodedSample>,
    /// Documents dropped for having too few tokens.
    pub rejected: usize,
    /// Files that could not be parsed as email.
    pub skipped: usize,
}

pub fn load_embedding_file(path: &Path, dim: usize) -> Result<EmbeddingTable, HarnessError> {
    let f = File::open(path).map_err(|e| unreadable(path, e))?;
    load_embedding(BufReader::new(f), dim).map_err(|e| unreadable(path, e))
}

/// The embedding named in the config, or the generated one.
pub fn config_embedding(cfg: &ExperimentConfig) -> Result<EmbeddingTable, HarnessError> {
    match &cfg.embedding {
        Some(p) => load_embedding_file(p, cfg.embedding_dim),
        None => Ok(synthetic_embedding(
            cfg.synthetic.vocab_size,
            cfg.embedding_dim,
            cfg.synthetic.factors,
            cfg.synthetic.embedding_seed,
        )),
    }
}

pub fn corpus_spec(s: &SyntheticConfig) -> CorpusSpec {
    CorpusSpec {
        n_per_class: s.n_per_class,
        seed: s.corpus_seed,
        topic_pool: s.topic_pool,
        background_pool: s.background_pool,
        topic_rate: s.topic_rate,
        ..CorpusSpec::new(s.n_per_class, s.corpus_seed)
    }
}

/// Text pipeline with any configured table overrides.
pub fn config_pipeline(cfg: &ExperimentConfig) -> Result<TextPipeline, HarnessError> {
    let (sw, ex) = (cfg.stopwords.as_deref(), cfg.lemma_exceptions.as_deref());
    TextPipeline::from_files(sw, ex).map_err(|e| {
        let path = sw.filter(|p| !p.is_file()).or(ex).unwrap_or(Path::new(""));
        unreadable(path, e)
    })
}

/// Writes documents as minimal plain-text `.eml` files under
/// `root/phishing/` and `root/legitimate/`, named by their index.
pub fn write_eml_corpus(
    root: &Path,
    phishing: &[Document],
    legitimate: &[Document],
) -> Result<(), HarnessError> {
    for (sub, docs) in [("phishing", phishing), ("legitimate", legitimate)] {
        for (i, d) in docs.iter().enumerate() {
            let body = format!(
                "From: generator@example.invalid\r\nMIME-Version: 1.0\r\n\
                 Content-Type: text/plain; charset=us-ascii\r\n\r\n{}\r\n",
                d.text
            );
            write_file(&root.join(sub).join(format!("{i:05}.eml")), &body)?;
        }
    }
    Ok(())
}

/// Reads the email directories (or generates the synthetic corpus) and encodes it.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let table = config_embedding(cfg)?;
    let pipeline = config_pipeline(cfg)?;
    let (phish_docs, legit_docs, skipped) = match (&cfg.phishing_dir, &cfg.legitimate_dir) {
        (Some(p), Some(l)) => {
            let (pd, ps) = ingest_dir(p, Label::Phishing).map_err(|e| unreadable(p, e))?;
            let (ld, ls) = ingest_dir(l, Label::Legitimate).map_err(|e| unreadable(l, e))?;
            (pd, ld, ps.len() + ls.len())
        }
        _ => {
            let (p, l) = gen_synthetic_corpus(&corpus_spec(&cfg.synthetic), &table)
                .map_err(|e| HarnessError::Data(format!("synthetic corpus: {e}")))?;
            (p, l, 0)
        }
    };
    let (phishing, r1) = encode_documents(&phish_docs, &pipeline, &table);
    let (legitimate, r2) = encode_documents(&legit_docs, &pipeline, &table);
    Ok(Dataset {
        table,
        phishing,
        legitimate,
        rejected: r1 + r2,
        skipped,
    })
}

/// Round logs of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// Per-round records; for standalone runs, accuracy is the mean over clients.
    pub records: Vec<RoundRecord>,
    /// Standalone only: each client's own log.
    pub client_records: Vec<Vec<RoundRecord>>,
    pub manifest: Option<String>,
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        lr: cfg.lr,
        batch: cfg.batch,
        local_epochs: cfg.epochs_local,
        patience: cfg.patience,
        max_epochs: cfg.rounds,
        clip_norm: cfg.clip_norm,
    }
}

fn mean_over_clients(histories: &[Vec<RoundRecord>], rounds: usize) -> Vec<RoundRecord> {
    (0..rounds)
        .map(|r| {
            let n = histories.len() as f64;
            let acc = histories.iter().map(|h| h[r].accuracy).sum::<f64>() / n;
            let losses: Vec<f64> = histories.iter().filter_map(|h| h[r].mean_loss).collect();
            RoundRecord {
                round: r + 1,
                selected: Vec::new(),
                accuracy: acc,
                mean_loss: (!losses.is_empty())
                    .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            }
        })
        .collect()
}

/// Split, partition, initialize and train one seed according to `cfg.mode`.
pub fn run_seed(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<SeedRun, HarnessError> {
    let (train, test) = balance_and_split(
        &data.phishing,
        &data.legitimate,
        derive_seed(seed, Stream::Split, 0, 0),
    )?;
    let init = init_params(cfg.architecture(), derive_seed(seed, Stream::Init, 0, 0));
    let tc = train_config(cfg);
    let table = &data.table;
    match cfg.mode {
        Mode::Centralized => {
            let res = train_centralized(&train, &test, table, &init, &tc, seed)?;
            Ok(SeedRun {
                seed,
                records: res.history,
                client_records: Vec::new(),
                manifest: None,
            })
        }
        Mode::Federated | Mode::Standalone => {
            let split = SplitSpec::new(cfg.clients, cfg.alpha, derive_seed(seed, Stream::Partition, 0, 0))?;
            let clients = split.partition(&train)?;
            let manifest = Some(manifest_json(&clients));
            if cfg.mode == Mode::Federated {
                let policy = (cfg.checkpoint_every > 0).then(|| CheckpointPolicy {
                    dir: cfg
                        .output_dir
                        .join(cfg.tag())
                        .join("checkpoints")
                        .join(format!("seed_{seed}")),
                    every: cfg.checkpoint_every,
                });
                if let Some(p) = &policy {
                    fs::create_dir_all(&p.dir).map_err(|e| unreadable(&p.dir, e))?;
                }
                let mut server = ServerState::new(init, seed);
                let records = run_federated(
                    &mut server,
                    &clients,
                    cfg.selected,
                    &test,
                    table,
                    &tc,
                    cfg.rounds,
                    policy.as_ref(),
                )?;
                Ok(SeedRun {
                    seed,
                    records,
                    client_records: Vec::new(),
                    manifest,
                })
            } else {
                let histories = clients
                    .par_iter()
                    .map(|c| train_standalone(c, &test, table, &init, &tc, seed).map(|r| r.history))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(SeedRun {
                    seed,
                    records: mean_over_clients(&histories, cfg.rounds),
                    client_records: histories,
                    manifest,
                })
            }
        }
    }
}

/// Aggregate results of one configuration over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub label: String,
    pub mode: Mode,
    pub clients: usize,
    pub selected: usize,
    pub alpha: f64,
    pub rounds: usize,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    /// Accuracy at the last round, per seed.
    pub final_accuracy: Vec<f64>,
    /// Mean accuracy over the last five rounds, per seed.
    pub last5_accuracy: Vec<f64>,
    pub mean_final: f64,
    /// Mean over seeds of `last5_accuracy`.
    pub mean_last5: f64,
    /// Per-round mean and sample standard deviation over seeds.
    pub round_mean: Vec<f64>,
    pub round_std: Vec<f64>,
    /// Mean final accuracy below the non-convergence threshold.
    pub non_converged: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Builds the summary from per-seed round logs alone.
pub fn summarize(
    cfg: &ExperimentConfig,
    runs: &[(u64, Vec<RoundRecord>)],
) -> Result<ExperimentSummary, HarnessError> {
    let rounds = runs.first().map_or(0, |(_, r)| r.len());
    if rounds == 0 || runs.iter().any(|(_, r)| r.len() != rounds) {
        return Err(HarnessError::Data(
            "round logs are empty or of different lengths".into(),
        ));
    }
    let acc = |r: &[RoundRecord]| r.iter().map(|x| x.accuracy).collect::<Vec<_>>();
    let final_accuracy: Vec<f64> = runs.iter().map(|(_, r)| r[rounds - 1].accuracy).collect();
    let last5_accuracy: Vec<f64> = runs
        .iter()
        .map(|(_, r)| mean(&acc(&r[rounds.saturating_sub(5)..])))
        .collect();
    let per_round: Vec<Vec<f64>> = (0..rounds)
        .map(|i| runs.iter().map(|(_, r)| r[i].accuracy).collect())
        .collect();
    let mean_final = mean(&final_accuracy);
    Ok(ExperimentSummary {
        label: cfg.tag(),
        mode: cfg.mode,
        clients: cfg.clients,
        selected: cfg.selected,
        alpha: cfg.alpha,
        rounds,
        fingerprint: cfg.fingerprint(),
        seeds: runs.iter().map(|(s, _)| *s).collect(),
        mean_last5: mean(&last5_accuracy),
        final_accuracy,
        last5_accuracy,
        mean_final,
        round_mean: per_round.iter().map(|v| mean(v)).collect(),
        round_std: per_round.iter().map(|v| sample_std(v)).collect(),
        non_converged: mean_final < NON_CONVERGENCE_THRESHOLD,
    })
}

fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(cfg.tag())
}

pub fn seed_csv_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    run_dir(cfg).join(format!("seed_{seed}.csv"))
}

pub fn summary_path(cfg: &ExperimentConfig) -> PathBuf {
    run_dir(cfg).join("summary.json")
}

/// Runs every seed against an already-loaded dataset, writes the round logs,
/// partition manifests and summary under `output_dir/<tag>/`.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, data, seed))
        .collect::<Result<Vec<_>, _>>()?;
    for run in &runs {
        write_file(&seed_csv_path(cfg, run.seed), &rounds_to_csv(&run.records))?;
        for (k, h) in run.client_records.iter().enumerate() {
            let p = run_dir(cfg).join(format!("seed_{}_client_{k}.csv", run.seed));
            write_file(&p, &rounds_to_csv(h))?;
        }
        if let Some(m) = &run.manifest {
            write_file(&run_dir(cfg).join(format!("seed_{}_partition.json", run.seed)), m)?;
        }
    }
    let logs: Vec<(u64, Vec<RoundRecord>)> = runs.into_iter().map(|r| (r.seed, r.records)).collect();
    let summary = summarize(cfg, &logs)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&summary_path(cfg), &json)?;
    write_file(&run_dir(cfg).join("config.toml"), &cfg.to_toml())?;
    Ok(summary)
}

/// Loads the data named by `cfg` and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    run_experiment_on(cfg, &data)
}

/// Recomputes a summary from the round logs already written for `cfg`.
pub fn summary_from_logs(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let path = seed_csv_path(cfg, seed);
        let text = fs::read_to_string(&path).map_err(|e| unreadable(&path, e))?;
        let records = parse_round_csv(&text).map_err(|e| unreadable(&path, e))?;
        runs.push((seed, records));
    }
    summarize(cfg, &runs)
}

/// Configuration of one grid cell derived from `base`.
pub fn grid_cell(base: &ExperimentConfig, clients: usize, selected: usize, alpha: f64) -> ExperimentConfig {
    ExperimentConfig {
        mode: Mode::Federated,
        clients,
        selected,
        alpha,
        ..base.clone()
    }
}

/// Sweeps the given client counts (selection sizes tied per the grid) and alphas
/// in federated mode, then writes `grid_table.csv` to the output directory.
pub fn grid(
    base: &ExperimentConfig,
    clients: &[usize],
    alphas: &[f64],
) -> Result<Vec<ExperimentSummary>, HarnessError> {
    let mut cells = Vec::new();
    for &k in clients {
        let s = grid_selected(k).ok_or_else(|| HarnessError::ConfigInvalid {
            field: "grid_clients".into(),
            reason: format!("{k} is not a grid client count (10, 20, 50)"),
        })?;
        for &a in alphas {
            let cell = grid_cell(base, k, s, a);
            cell.validate()?;
            cells.push(cell);
        }
    }
    let data = load_dataset(base)?;
    let summaries = cells
        .iter()
        .map(|c| run_experiment_on(c, &data))
        .collect::<Result<Vec<_>, _>>()?;
    write_file(&base.output_dir.join("grid_table.csv"), &grid_table_csv(&summaries))?;
    Ok(summaries)
}

/// One row per cell: client setup, accuracies and the non-convergence flag.
pub fn grid_table_csv(summaries: &[ExperimentSummary]) -> String {
    let mut out = String::from("clients,selected,alpha,mean_last5,mean_final,std_final,non_converged\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.clients,
            s.selected,
            s.alpha,
            s.mean_last5,
            s.mean_final,
            sample_std(&s.final_accuracy),
            s.non_converged
        );
    }
    out
}

pub const PLOT_CSV_HEADER: &str = "series,round,mean,stddev";

/// Long-format plot data: one row per (series, round) with the mean accuracy over
/// seeds and its standard deviation.
pub fn emit_plot_data(summaries: &[ExperimentSummary]) -> String {
    let mut out = String::from(PLOT_CSV_HEADER);
    out.push('\n');
    for s in summaries {
        for (i, (m, sd)) in s.round_mean.iter().zip(&s.round_std).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", s.label, i + 1, m, sd);
        }
    }
    out
}

pub fn read_summary(path: &Path) -> Result<ExperimentSummary, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| unreadable(path, e))?;
    serde_json::from_str(&text).map_err(|e| unreadable(path, e))
}
