//! The default generated corpus: scale, determinism and separability by an
//! independent bag-of-words logistic regression.

use std::collections::HashMap;

use phishbowl::embedding::EncodedSample;
use phishbowl::federated::{derive_seed, Stream};
use phishbowl::harness::{load_dataset, ExperimentConfig};
use phishbowl::ingest::Label;
use phishbowl::partition::balance_and_split;

/// Raw token counts over the train vocabulary.
fn features(s: &EncodedSample, vocab: &HashMap<u32, usize>) -> Vec<(usize, f64)> {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for &i in &s.indices[..s.true_length] {
        if let Some(&j) = vocab.get(&i) {
            *counts.entry(j).or_default() += 1.0;
        }
    }
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort_unstable_by_key(|&(j, _)| j);
    out
}

fn logistic_accuracy(train: &[EncodedSample], test: &[EncodedSample]) -> f64 {
    let mut vocab = HashMap::new();
    for s in train {
        for &i in &s.indices[..s.true_length] {
            let next = vocab.len();
            vocab.entry(i).or_insert(next);
        }
    }
    let xs: Vec<_> = train.iter().map(|s| features(s, &vocab)).collect();
    let ys: Vec<f64> = train.iter().map(|s| s.label.as_u8() as f64).collect();
    let mut w = vec![0.0; vocab.len()];
    let mut b = 0.0;
    // Full-batch gradient descent with a small ridge penalty.
    let (lr, ridge) = (0.5, 1e-4);
    for _ in 0..3000 {
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = b + x.iter().map(|&(j, v)| w[j] * v).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            gb += err;
            for &(j, v) in x {
                gw[j] += err * v;
            }
        }
        let n = xs.len() as f64;
        for (wj, gj) in w.iter_mut().zip(&gw) {
            *wj -= lr * (gj / n + ridge * *wj);
        }
        b -= lr * gb / n;
    }
    let correct = test
        .iter()
        .filter(|s| {
            let z: f64 = b + features(s, &vocab).iter().map(|&(j, v)| w[j] * v).sum::<f64>();
            (z > 0.0) == (s.label == Label::Phishing)
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn default_corpus_has_reference_scale_and_is_linearly_separable() {
    let cfg = ExperimentConfig::default();
    let data = load_dataset(&cfg).unwrap();
    assert_eq!((data.phishing.len(), data.legitimate.len()), (594, 594));
    assert_eq!(data.rejected, 0);
    // The test splits the ten default experiment seeds train and evaluate on.
    let accs: Vec<f64> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let split_seed = derive_seed(seed, Stream::Split, 0, 0);
            let (train, test) = balance_and_split(&data.phishing, &data.legitimate, split_seed).unwrap();
            assert_eq!((train.len(), test.len()), (950, 238));
            logistic_accuracy(&train, &test)
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(mean > 0.95, "bag-of-words logistic accuracy {mean} ({accs:?})");
}

#[test]
fn corpus_generation_is_deterministic() {
    let cfg = ExperimentConfig::default();
    let a = load_dataset(&cfg).unwrap();
    let b = load_dataset(&cfg).unwrap();
    assert_eq!(a.phishing, b.phishing);
    assert_eq!(a.legitimate, b.legitimate);
    assert_eq!(a.table.checksum(), b.table.checksum());
}
