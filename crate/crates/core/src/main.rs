use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phishbowl::harness::{
    config_embedding, config_pipeline, corpus_spec, emit_plot_data, gen_synthetic_corpus, grid,
    read_summary, run_experiment, write_eml_corpus, ExperimentConfig, HarnessError, Mode,
    GRID_ALPHAS, GRID_CLIENTS,
};
use phishbowl::ingest::{ingest_dir, write_jsonl, Label};
use phishbowl::nn::{random_check, Architecture};

/// Federated BiLSTM phishing-detection simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse email directories into a JSON-lines document file.
    Ingest {
        #[arg(long, env = "FEDPB_PHISHING_DIR")]
        phishing_dir: PathBuf,
        #[arg(long, env = "FEDPB_LEGITIMATE_DIR")]
        legitimate_dir: PathBuf,
        /// Also write the preprocessed token stream instead of raw text.
        #[arg(long)]
        tokens: bool,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        lemma_exceptions: Option<PathBuf>,
        #[arg(long, default_value = "documents.jsonl")]
        out: PathBuf,
    },
    /// Write the synthetic corpus as .eml files plus its embedding file.
    GenCorpus {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value = "corpus")]
        out_dir: PathBuf,
    },
    /// Run one experiment over all configured seeds.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Sweep client counts × heterogeneity levels in federated mode.
    Grid {
        #[command(flatten)]
        exp: ExpArgs,
        /// Client counts to sweep (each paired with its selection size).
        #[arg(long, value_delimiter = ',')]
        grid_clients: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        grid_alphas: Option<Vec<f64>>,
    },
    /// Turn summary files into a long-format CSV of per-round mean and stddev.
    PlotData {
        summaries: Vec<PathBuf>,
        #[arg(long, default_value = "plot_data.csv")]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on a small model.
    GradCheck {
        #[arg(long, default_value_t = 6)]
        seq_len: usize,
        #[arg(long, default_value_t = 3)]
        input_dim: usize,
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 3)]
        lstm_layers: usize,
        #[arg(long, default_value_t = 8)]
        dense: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Experiment flags; each overrides the matching key of `--config`.
#[derive(Args)]
struct ExpArgs {
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    selected: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, env = "FEDPB_PHISHING_DIR")]
    phishing_dir: Option<PathBuf>,
    #[arg(long, env = "FEDPB_LEGITIMATE_DIR")]
    legitimate_dir: Option<PathBuf>,
    #[arg(long, env = "FEDPB_EMBEDDING")]
    embedding: Option<PathBuf>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    lemma_exceptions: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs_local: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dense: Option<usize>,
    #[arg(long)]
    lstm_layers: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Synthetic corpus: documents per class.
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    corpus_seed: Option<u64>,
    #[arg(long)]
    topic_rate: Option<f64>,
}

impl ExpArgs {
    fn resolve(self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $( if self.$f.is_some() { c.$f = self.$f; } )* };
        }
        set!(mode, clients, selected, alpha, rounds, seeds, embedding_dim, lr, batch);
        set!(epochs_local, patience, hidden, dense, lstm_layers, checkpoint_every, output_dir);
        set_opt!(phishing_dir, legitimate_dir, embedding, stopwords, lemma_exceptions, clip_norm);
        if let Some(v) = self.n_per_class {
            c.synthetic.n_per_class = v;
        }
        if let Some(v) = self.corpus_seed {
            c.synthetic.corpus_seed = v;
        }
        if let Some(v) = self.topic_rate {
            c.synthetic.topic_rate = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn io_err(path: &std::path::Path, e: impl ToString) -> HarnessError {
    HarnessError::DataUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn create(path: &std::path::Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn print_summary(s: &phishbowl::harness::ExperimentSummary) {
    println!(
        "{}: last-5 mean accuracy {:.4}, final {:.4}{} ({} seeds, fingerprint {})",
        s.label,
        s.mean_last5,
        s.mean_final,
        if s.non_converged { " [non-converged]" } else { "" },
        s.seeds.len(),
        &s.fingerprint[..12]
    );
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Ingest {
            phishing_dir,
            legitimate_dir,
            tokens,
            stopwords,
            lemma_exceptions,
            out,
        } => {
            let (mut docs, mut skipped) =
                ingest_dir(&phishing_dir, Label::Phishing).map_err(|e| io_err(&phishing_dir, e))?;
            let (d2, s2) = ingest_dir(&legitimate_dir, Label::Legitimate)
                .map_err(|e| io_err(&legitimate_dir, e))?;
            docs.extend(d2);
            skipped.extend(s2);
            for s in &skipped {
                eprintln!("skipped {}: {}", s.path.display(), s.error);
            }
            if tokens {
                let cfg = ExperimentConfig { stopwords, lemma_exceptions, ..Default::default() };
                let pipeline = config_pipeline(&cfg)?;
                for d in &mut docs {
                    d.text = pipeline.preprocess(d).joined();
                }
            }
            let mut w = create(&out)?;
            write_jsonl(&docs, &mut w).and_then(|_| w.flush()).map_err(|e| io_err(&out, e))?;
            println!("{} documents written to {}, {} skipped", docs.len(), out.display(), skipped.len());
        }
        Command::GenCorpus { exp, out_dir } => {
            let cfg = exp.resolve()?;
            let table = config_embedding(&cfg)?;
            let (p, l) = gen_synthetic_corpus(&corpus_spec(&cfg.synthetic), &table)
                .map_err(|e| HarnessError::Data(format!("synthetic corpus: {e}")))?;
            write_eml_corpus(&out_dir, &p, &l)?;
            let emb = out_dir.join("embedding.txt");
            let mut w = create(&emb)?;
            table.write_glove(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&emb, e))?;
            println!(
                "{} + {} documents and a {}-word embedding written to {}",
                p.len(),
                l.len(),
                table.vocab_size(),
                out_dir.display()
            );
        }
        Command::Run { exp } => {
            let cfg = exp.resolve()?;
            print_summary(&run_experiment(&cfg)?);
        }
        Command::Grid { exp, grid_clients, grid_alphas } => {
            let cfg = exp.resolve()?;
            let clients = grid_clients.unwrap_or_else(|| GRID_CLIENTS.iter().map(|&(k, _)| k).collect());
            let alphas = grid_alphas.unwrap_or_else(|| GRID_ALPHAS.to_vec());
            for s in grid(&cfg, &clients, &alphas)? {
                print_summary(&s);
            }
        }
        Command::PlotData { summaries, out } => {
            let loaded = summaries.iter().map(|p| read_summary(p)).collect::<Result<Vec<_>, _>>()?;
            let mut w = create(&out)?;
            w.write_all(emit_plot_data(&loaded).as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io_err(&out, e))?;
            println!("{} series written to {}", loaded.len(), out.display());
        }
        Command::GradCheck {
            seq_len,
            input_dim,
            hidden,
            lstm_layers,
            dense,
            batch,
            seed,
            step,
            tolerance,
        } => {
            let arch = Architecture { seq_len, input_dim, hidden, lstm_layers, dense };
            let invalid = |e: phishbowl::nn::ModelError| HarnessError::ConfigInvalid {
                field: "architecture".into(),
                reason: e.to_string(),
            };
            arch.validate().map_err(invalid)?;
            let report = random_check(arch, batch, seed, step).map_err(invalid)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.max_rel_error >= tolerance {
                return Err(HarnessError::Data(format!(
                    "max relative error {:e} exceeds {tolerance:e}",
                    report.max_rel_error
                )));
            }
            println!("gradient check passed ({} coordinates)", report.coordinates);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
