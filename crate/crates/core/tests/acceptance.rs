//! Acceptance suite: one PASS/FAIL line per criterion, every tolerance pinned
//! below. Runs with its own harness so the lines always print; exits non-zero
//! if any criterion fails.
//!
//! Training criteria (5, 6, 7) use the compact acceptance architecture on the
//! generated 594 + 594 corpus; everything else (sequence length, embedding
//! width, optimizer, batch, rounds, seeds, client counts) is the reference setup.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phishbowl::embedding::{encode, EmbeddingTable, Encoded, EncodedSample, MAX_LEN, MIN_LEN, PAD_INDEX};
use phishbowl::federated::{
    derive_seed, fedavg_aggregate, run_federated, train_sequential, LocalUpdate, ServerState, Stream,
    TrainConfig,
};
use phishbowl::harness::{
    grid_selected, load_dataset, run_experiment_on, seed_csv_path, Dataset, ExperimentConfig,
    ExperimentSummary, Mode, GRID_ALPHAS, GRID_CLIENTS,
};
use phishbowl::ingest::Label;
use phishbowl::nn::{init_params, random_check, Architecture, ParamVector};
use phishbowl::partition::{balance_and_split, SplitSpec};
use phishbowl::text::ProcessedText;

// Criterion 1.
const GRAD_ARCH: Architecture = Architecture { seq_len: 6, input_dim: 3, hidden: 4, lstm_layers: 3, dense: 8 };
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_SEEDS: [u64; 3] = [0, 1, 2];
const GRAD_TIME_LIMIT_S: f64 = 60.0;
// Criterion 2.
const FEDAVG_CASES: usize = 2000;
/// Bound for identities that hold exactly in real arithmetic, in units of
/// f64::EPSILON times the magnitude of the operands.
const FEDAVG_ULPS: f64 = 8.0;
// Criterion 3.
const PARTITION_SEEDS: u64 = 10;
// Criterion 4.
const ENCODE_CASES: usize = 10_000;
const ENCODE_TIME_LIMIT_S: f64 = 10.0;
// Criterion 5. Only the LSTM width is reduced from the reference model; the
// dense layer keeps its reference width of 200.
const ACCEPT_HIDDEN: usize = 8;
const ACCEPT_DENSE: usize = 200;
const FED_VS_CENTRAL_GAP: f64 = 0.05;
const FED_FLOOR: f64 = 0.83;
const RUNTIME_TARGET_S: f64 = 30.0 * 60.0;
// Criterion 6.
const TREND_BAND: f64 = 0.03;
const SLOW_ROUND: usize = 25;
// Criterion 8.
const REDUCTION_ROUNDS: usize = 5;
const REDUCTION_TOL: f64 = 1e-10;

struct Line {
    id: u8,
    pass: bool,
    text: String,
}

fn line(id: u8, pass: bool, text: impl Into<String>) -> Line {
    let l = Line { id, pass, text: text.into() };
    println!("criterion {}: {} - {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.text);
    l
}

fn out_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn accept_config(dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        hidden: ACCEPT_HIDDEN,
        dense: ACCEPT_DENSE,
        output_dir: out_root().join(dir),
        ..ExperimentConfig::default()
    }
}

fn gradient_oracle() -> Line {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for seed in GRAD_SEEDS {
        let r = random_check(GRAD_ARCH, 2, seed, GRAD_STEP).expect("gradient check runs");
        worst = worst.max(r.max_rel_error);
        coords = r.coordinates;
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        1,
        worst < GRAD_REL_TOL && secs < GRAD_TIME_LIMIT_S,
        format!(
            "gradient oracle: max relative error {worst:.2e} < {GRAD_REL_TOL:e} over {coords} coordinates x {} seeds, {secs:.1} s < {GRAD_TIME_LIMIT_S} s",
            GRAD_SEEDS.len()
        ),
    )
}

fn update(id: usize, n: usize, delta: Vec<f64>) -> LocalUpdate {
    LocalUpdate { client_id: id, delta: ParamVector(delta), n_k: n, mean_loss: 0.0, local: None }
}

fn close(a: &[f64], b: &[f64], scale: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= FEDAVG_ULPS * f64::EPSILON * scale.max(1.0))
}

fn fedavg_algebra() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fail = |name| *failures.entry(name).or_default() += 1;
    for _ in 0..FEDAVG_CASES {
        let dim = rng.gen_range(1..16);
        let k = rng.gen_range(1..8);
        let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let gv = ParamVector(g.clone());
        let ns: Vec<usize> = (0..k).map(|_| rng.gen_range(1..200)).collect();
        let deltas: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let ups: Vec<_> = (0..k).map(|i| update(i, ns[i], deltas[i].clone())).collect();
        let base = fedavg_aggregate(&gv, &ups).unwrap();

        let zero: Vec<_> = ns.iter().enumerate().map(|(i, &n)| update(i, n, vec![0.0; dim])).collect();
        if fedavg_aggregate(&gv, &zero).unwrap().0 != g {
            fail("zero-delta fixed point");
        }
        let local: Vec<f64> = g.iter().zip(&deltas[0]).map(|(a, d)| a + d).collect();
        let single = fedavg_aggregate(&gv, &[update(0, ns[0], deltas[0].clone())]).unwrap();
        if !close(&single.0, &local, 15.0) {
            fail("single-client identity");
        }
        // Unit deltas move every coordinate by the sum of the weights.
        let unit: Vec<_> = ns.iter().enumerate().map(|(i, &n)| update(i, n, vec![1.0; dim])).collect();
        let moved = fedavg_aggregate(&gv, &unit).unwrap();
        let sums: Vec<f64> = moved.0.iter().zip(&g).map(|(m, a)| m - a).collect();
        if !close(&sums, &vec![1.0; dim], 10.0 * k as f64) {
            fail("weights sum to one");
        }
        let c = rng.gen_range(2..50);
        let scaled: Vec<_> = (0..k).map(|i| update(i, ns[i] * c, deltas[i].clone())).collect();
        if !close(&fedavg_aggregate(&gv, &scaled).unwrap().0, &base.0, 15.0 * k as f64) {
            fail("common scaling of n_k");
        }
    }
    // Hand-evaluated: n = (1, 2, 3), deltas (6, 0, -6) -> G - 2.
    let g: Vec<f64> = (0..50).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let ups: Vec<_> = [(1, 6.0), (2, 0.0), (3, -6.0)]
        .iter()
        .enumerate()
        .map(|(i, &(n, d))| update(i, n, vec![d; g.len()]))
        .collect();
    let got = fedavg_aggregate(&ParamVector(g.clone()), &ups).unwrap();
    let want: Vec<f64> = g.iter().map(|x| x - 2.0).collect();
    if !close(&got.0, &want, 12.0) {
        fail("three-client example");
    }
    let pass = failures.is_empty();
    line(
        2,
        pass,
        if pass {
            format!("FedAvg algebra: zero-delta fixed point, single-client identity, weight normalization, common n_k scaling over {FEDAVG_CASES} random cases and the three-client example (G - 2) within {FEDAVG_ULPS} ulp-scaled epsilon")
        } else {
            format!("FedAvg algebra violations: {failures:?}")
        },
    )
}

fn multiset(samples: &[EncodedSample]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(format!("{}|{:?}", s.source_id, s.indices)).or_default() += 1;
    }
    m
}

fn partition_correctness(data: &Dataset) -> Line {
    let mut cells = 0;
    let mut problems = Vec::new();
    for seed in 0..PARTITION_SEEDS {
        let (train, _) =
            balance_and_split(&data.phishing, &data.legitimate, derive_seed(seed, Stream::Split, 0, 0)).unwrap();
        let whole = multiset(&train);
        for &(k, _) in &GRID_CLIENTS {
            for &alpha in &GRID_ALPHAS {
                cells += 1;
                let spec = SplitSpec::new(k, alpha, derive_seed(seed, Stream::Partition, 0, 0)).unwrap();
                let clients = match spec.partition(&train) {
                    Ok(c) => c,
                    Err(e) => {
                        problems.push(format!("K={k} a={alpha} seed {seed}: {e}"));
                        continue;
                    }
                };
                let all: Vec<EncodedSample> = clients.iter().flat_map(|c| c.samples.clone()).collect();
                if clients.len() != k || multiset(&all) != whole {
                    problems.push(format!("K={k} a={alpha} seed {seed}: not an exact partition"));
                }
                for c in &clients {
                    // One sample of phishing count moves |2P - 1| by 2 / n.
                    let n = c.len() as f64;
                    let realized = (2.0 * c.phishing_count() as f64 / n - 1.0).abs();
                    let excess = (realized - alpha).abs() - 2.0 / n;
                    if excess > 1e-12 {
                        problems.push(format!(
                            "K={k} a={alpha} seed {seed} client {}: |2P-1| = {realized:.4}",
                            c.client_id
                        ));
                    }
                }
            }
        }
    }
    let pass = problems.is_empty();
    line(
        3,
        pass,
        if pass {
            format!("partition correctness: {cells} (cell, seed) splits of the 950-sample train set are exact partitions with every client's |2P_k - 1| within one sample (2/n_k) of alpha")
        } else {
            format!("partition problems: {}", problems.iter().take(5).cloned().collect::<Vec<_>>().join("; "))
        },
    )
}

fn encoding_contract() -> Line {
    let vocab: Vec<String> = (0..500).map(|i| format!("word{i}")).collect();
    let table = EmbeddingTable::from_pairs(4, vocab.iter().map(|w| (w.clone(), vec![0.5; 4]))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t0 = Instant::now();
    let mut bad = 0;
    let (mut truncated, mut rejected) = (0, 0);
    for case in 0..ENCODE_CASES {
        let n = rng.gen_range(0..450);
        let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..600)).collect();
        let tokens: Vec<String> =
            picks.iter().map(|&i| if i < 500 { vocab[i].clone() } else { format!("unseen{i}") }).collect();
        let label = if case % 2 == 0 { Label::Phishing } else { Label::Legitimate };
        let text = ProcessedText { tokens, label, source_id: case.to_string() };
        let ok = match encode(&text, &table, MAX_LEN, MIN_LEN) {
            Encoded::Rejected { tokens } => {
                rejected += 1;
                n < MIN_LEN && tokens == n
            }
            Encoded::Sample(s) => {
                if n > MAX_LEN {
                    truncated += 1;
                }
                n >= MIN_LEN
                    && s.indices.len() == MAX_LEN
                    && s.true_length == n.min(MAX_LEN)
                    && s.label == label
                    && s.indices.iter().enumerate().all(|(k, &ix)| {
                        if k < s.true_length {
                            let want = if picks[k] < 500 { picks[k] as u32 + 1 } else { table.oov_index() };
                            ix == want
                        } else {
                            ix == PAD_INDEX
                        }
                    })
            }
        };
        if !ok {
            bad += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        4,
        bad == 0 && secs < ENCODE_TIME_LIMIT_S && truncated > 0 && rejected > 0,
        format!(
            "encoding contract: {ENCODE_CASES} random cases ({truncated} truncated, {rejected} rejected), {bad} violations of length {MAX_LEN} / truncation / post-padding / rejection below {MIN_LEN}, {secs:.2} s < {ENCODE_TIME_LIMIT_S} s"
        ),
    )
}

fn round_mean(s: &ExperimentSummary, round: usize) -> f64 {
    s.round_mean[round - 1]
}

fn relative_performance(fed: &ExperimentSummary, central: &ExperimentSummary, standalone: &ExperimentSummary, secs: f64) -> Line {
    let gap = (fed.mean_final - central.mean_final).abs();
    let a = gap <= FED_VS_CENTRAL_GAP;
    let b = standalone.mean_last5 < fed.mean_last5;
    let c = fed.mean_final >= FED_FLOOR;
    line(
        5,
        a && b && c,
        format!(
            "relative performance over {} seeds: (a) round-50 federated {:.4} vs centralized {:.4}, gap {:.4} <= {FED_VS_CENTRAL_GAP} [{}]; (b) last-5 standalone {:.4} < federated {:.4} [{}]; (c) round-50 federated {:.4} >= {FED_FLOOR} [{}]; {:.0} s (runtime target {:.0} s {})",
            fed.seeds.len(),
            fed.mean_final,
            central.mean_final,
            gap,
            if a { "ok" } else { "no" },
            standalone.mean_last5,
            fed.mean_last5,
            if b { "ok" } else { "no" },
            fed.mean_final,
            if c { "ok" } else { "no" },
            secs,
            RUNTIME_TARGET_S,
            if secs < RUNTIME_TARGET_S { "met" } else { "missed on this machine; reported, not gated" }
        ),
    )
}

fn heterogeneity_trend(k10: &[ExperimentSummary], k50_iid: &ExperimentSummary, k50_skew: &ExperimentSummary) -> Line {
    let finals: Vec<f64> = k10.iter().map(|s| s.mean_final).collect();
    let mut monotone = true;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            if finals[j] > finals[i] + TREND_BAND {
                monotone = false;
            }
        }
    }
    let (iid, skew) = (round_mean(k50_iid, SLOW_ROUND), round_mean(k50_skew, SLOW_ROUND));
    let slower = skew < iid;
    let shown: Vec<String> = k10.iter().map(|s| format!("a={}: {:.4}", s.alpha, s.mean_final)).collect();
    line(
        6,
        monotone && slower,
        format!(
            "heterogeneity trend: K=10 round-50 accuracy [{}] non-increasing within {TREND_BAND} [{}]; K=50 round-{SLOW_ROUND} accuracy a=1.0 {:.4} < a=0.0 {:.4} [{}]",
            shown.join(", "),
            if monotone { "ok" } else { "no" },
            skew,
            iid,
            if slower { "ok" } else { "no" }
        ),
    )
}

fn determinism(first: &ExperimentConfig, data: &Dataset) -> Line {
    let again = ExperimentConfig { output_dir: out_root().join("rerun"), ..first.clone() };
    let summary = run_experiment_on(&again, data).expect("rerun");
    let mut differing = Vec::new();
    for &seed in &first.seeds {
        let a = fs::read(seed_csv_path(first, seed)).unwrap();
        let b = fs::read(seed_csv_path(&again, seed)).unwrap();
        if a != b {
            differing.push(seed);
        }
    }
    line(
        7,
        differing.is_empty(),
        format!(
            "determinism: rerun of {} ({} seeds) produced byte-identical round CSVs ({} differing), fingerprint {}",
            again.tag(),
            summary.seeds.len(),
            differing.len(),
            &summary.fingerprint[..12]
        ),
    )
}

fn reduction(cfg: &ExperimentConfig, data: &Dataset) -> Line {
    let seed = 0;
    let (train, test) =
        balance_and_split(&data.phishing, &data.legitimate, derive_seed(seed, Stream::Split, 0, 0)).unwrap();
    let init = init_params(cfg.architecture(), derive_seed(seed, Stream::Init, 0, 0));
    let tc = TrainConfig::default();
    let reference = train_sequential(&train, &data.table, &init, &tc, seed, REDUCTION_ROUNDS).unwrap();
    let clients = SplitSpec::new(1, 0.0, derive_seed(seed, Stream::Partition, 0, 0)).unwrap().partition(&train).unwrap();
    let mut server = ServerState::new(init, seed);
    let mut worst = 0.0f64;
    for want in &reference {
        run_federated(&mut server, &clients, 1, &test, &data.table, &tc, 1, None).unwrap();
        for (a, b) in server.global.values().iter().zip(want.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    line(
        8,
        worst <= REDUCTION_TOL,
        format!(
            "reduction: K=1, K_selected=1, 1 local epoch federated run vs sequential centralized training, {REDUCTION_ROUNDS} rounds, max parameter difference {worst:.2e} <= {REDUCTION_TOL:e}"
        ),
    )
}

fn main() {
    let _ = fs::remove_dir_all(out_root());
    let started = Instant::now();
    let mut lines = vec![gradient_oracle(), fedavg_algebra()];

    let base = accept_config("runs");
    let data = load_dataset(&base).expect("generated corpus");
    lines.push(partition_correctness(&data));
    lines.push(encoding_contract());
    lines.push(reduction(&base, &data));

    let t5 = Instant::now();
    let run = |cfg: &ExperimentConfig| {
        let t = Instant::now();
        let s = run_experiment_on(cfg, &data).expect("experiment runs");
        println!(
            "  ran {} over {} seeds in {:.0} s: last-5 {:.4}, round-{} {:.4}",
            s.label,
            s.seeds.len(),
            t.elapsed().as_secs_f64(),
            s.mean_last5,
            s.rounds,
            s.mean_final
        );
        s
    };
    let fed_cfg = ExperimentConfig { mode: Mode::Federated, ..base.clone() };
    let fed = run(&fed_cfg);
    let central = run(&ExperimentConfig { mode: Mode::Centralized, ..base.clone() });
    let standalone = run(&ExperimentConfig { mode: Mode::Standalone, ..base.clone() });
    lines.push(relative_performance(&fed, &central, &standalone, t5.elapsed().as_secs_f64()));

    let selected = |k| grid_selected(k).expect("grid client count");
    let mut k10 = vec![fed.clone()];
    for &alpha in &GRID_ALPHAS[1..] {
        k10.push(run(&ExperimentConfig { alpha, ..fed_cfg.clone() }));
    }
    // Only the first SLOW_ROUND rounds enter the K = 50 comparison.
    let k50 = |alpha| ExperimentConfig { clients: 50, selected: selected(50), alpha, rounds: SLOW_ROUND, ..fed_cfg.clone() };
    let k50_iid = run(&k50(0.0));
    let k50_skew = run(&k50(1.0));
    lines.push(heterogeneity_trend(&k10, &k50_iid, &k50_skew));

    lines.push(determinism(&fed_cfg, &data));

    lines.sort_by_key(|l| l.id);
    println!("\nacceptance summary ({:.0} s):", started.elapsed().as_secs_f64());
    for l in &lines {
        println!("criterion {}: {}", l.id, if l.pass { "PASS" } else { "FAIL" });
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
