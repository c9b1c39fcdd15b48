//! End-to-end runs of the command-line binary: exit codes, flag and environment
//! overrides, and the files each subcommand writes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phishbowl"));
    for var in ["FEDPB_PHISHING_DIR", "FEDPB_LEGITIMATE_DIR", "FEDPB_EMBEDDING"] {
        c.env_remove(var);
    }
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

/// Flags for a seconds-long experiment on a small generated corpus.
const SMALL: &[&str] = &[
    "--rounds", "2", "--seeds", "0,1", "--clients", "4", "--selected", "2", "--hidden", "3",
    "--dense", "4", "--lstm-layers", "1", "--embedding-dim", "8", "--n-per-class", "30",
    "--topic-rate", "0.3", "--lr", "0.01",
];

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        "embedding_dim = 8\n[synthetic]\nn_per_class = 30\nvocab_size = 600\nfactors = 3\ntopic_pool = 40\nbackground_pool = 200\ntopic_rate = 0.3\n",
    )
    .unwrap();
    p
}

#[test]
fn config_errors_exit_with_1_and_name_the_field() {
    let out = run(bin().args(["run", "--selected", "11"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`selected`"));
}

#[test]
fn data_errors_exit_with_2() {
    let out = run(bin().args(["run", "--embedding", "/definitely/missing.txt"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/missing.txt"));
}

#[test]
fn environment_supplies_dataset_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["run", "--output-dir"])
        .arg(dir.path())
        .env("FEDPB_PHISHING_DIR", dir.path().join("nope_p"))
        .env("FEDPB_LEGITIMATE_DIR", dir.path().join("nope_l"))
        .env("FEDPB_EMBEDDING", dir.path().join("nope.txt")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
}

#[test]
fn run_writes_logs_and_summary_then_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(bin().arg("run").arg("--config").arg(&cfg).args(SMALL).arg("--output-dir").arg(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("federated_K4_S2_a0");
    let log = std::fs::read_to_string(run_dir.join("seed_1.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("round,accuracy,mean_loss,selected_ids\n"));
    let plot = dir.path().join("plot.csv");
    let out = run(bin().arg("plot-data").arg(run_dir.join("summary.json")).arg("--out").arg(&plot));
    assert!(out.status.success());
    let csv = std::fs::read_to_string(plot).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("federated_K4_S2_a0,1,"));
}

#[test]
fn gen_corpus_then_ingest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let corpus = dir.path().join("corpus");
    let out = run(bin().arg("gen-corpus").arg("--config").arg(&cfg).arg("--out-dir").arg(&corpus));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(corpus.join("embedding.txt").is_file());
    let docs = dir.path().join("docs.jsonl");
    let out = run(bin()
        .arg("ingest")
        .env("FEDPB_PHISHING_DIR", corpus.join("phishing"))
        .env("FEDPB_LEGITIMATE_DIR", corpus.join("legitimate"))
        .arg("--out")
        .arg(&docs));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(docs).unwrap();
    assert_eq!(text.lines().count(), 60);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["label"], 1);
}

#[test]
fn grid_runs_selected_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(bin()
        .args(["grid", "--grid-clients", "10", "--grid-alphas", "0,1", "--rounds", "1", "--seeds", "0"])
        .args(["--hidden", "2", "--dense", "2", "--lstm-layers", "1", "--n-per-class", "60"])
        .arg("--config")
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("grid_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let out = run(bin().args(["grid", "--grid-clients", "7"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grad_check_passes_on_the_default_small_model() {
    let out = run(bin().arg("grad-check"));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradient check passed"));
}
