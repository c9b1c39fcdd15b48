//! Synthetic two-class corpus and a synthetic embedding to go with it, for
//! running the pipeline without a private email corpus.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::ingest::{Document, Label};
use crate::text::TextPipeline;

/// Shape of the generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_per_class: usize,
    pub seed: u64,
    /// Words in each class's topic pool.
    pub topic_pool: usize,
    /// Shared background words.
    pub background_pool: usize,
    /// Probability that a token is drawn from the document's topic pool.
    pub topic_rate: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl CorpusSpec {
    pub fn new(n_per_class: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            seed,
            topic_pool: 150,
            background_pool: 1500,
            topic_rate: 0.07,
            min_tokens: 10,
            max_tokens: 250,
        }
    }
}

/// Vocabulary words that survive the text pipeline unchanged, in table order.
fn stable_words<'a>(vocab: &'a EmbeddingTable, pipeline: &TextPipeline) -> Vec<(u32, &'a str)> {
    vocab
        .words()
        .iter()
        .enumerate()
        .filter(|(_, w)| {
            let out = pipeline.process_text(w);
            out.len() == 1 && out[0] == **w
        })
        .map(|(i, w)| (i as u32 + 1, w.as_str()))
        .collect()
}

/// Leading principal direction of the given rows (power iteration from a fixed start).
fn principal_direction(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut v: Vec<f64> = (0..dim).map(|j| 1.0 / (1.0 + j as f64)).collect();
    for _ in 0..100 {
        let mut next = vec![0.0; dim];
        for r in rows {
            let proj: f64 = r.iter().zip(&mean).zip(&v).map(|((x, m), v)| (x - m) * v).sum();
            for ((nj, x), m) in next.iter_mut().zip(r.iter()).zip(&mean) {
                *nj += proj * (x - m);
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v = next.into_iter().map(|x| x / norm).collect();
    }
    // Fix the sign so the result does not depend on the start vector's orientation.
    if let Some(big) = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}

/// Word pools: (phishing topic, legitimate topic, background). Topic pools are
/// the two extremes of the vocabulary along its leading principal direction;
/// background words are those nearest the middle.
pub fn topic_pools(
    vocab: &EmbeddingTable,
    spec: &CorpusSpec,
) -> Result<(Vec<String>, Vec<String>, Vec<String>), EmbeddingError> {
    let pipeline = TextPipeline::default();
    let words = stable_words(vocab, &pipeline);
    let needed = 2 * spec.topic_pool + spec.background_pool;
    if words.len() < needed || spec.topic_pool == 0 || spec.background_pool == 0 {
        return Err(EmbeddingError::Empty);
    }
    let rows: Vec<&[f64]> = words
        .iter()
        .map(|&(i, _)| vocab.row(i))
        .collect::<Result<_, _>>()?;
    let dir = principal_direction(&rows, vocab.dim());
    let mut scored: Vec<(f64, &str)> = rows
        .iter()
        .zip(&words)
        .map(|(r, &(_, w))| (r.iter().zip(&dir).map(|(a, b)| a * b).sum(), w))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let take = |s: &[(f64, &str)]| s.iter().map(|&(_, w)| w.to_string()).collect::<Vec<_>>();
    let legit = take(&scored[..spec.topic_pool]);
    let phish = take(&scored[scored.len() - spec.topic_pool..]);
    let mid = &scored[spec.topic_pool..scored.len() - spec.topic_pool];
    let centre = mid.len() / 2;
    let lo = centre - spec.background_pool / 2;
    let background = take(&mid[lo..lo + spec.background_pool]);
    Ok((phish, legit, background))
}

/// `n_per_class` documents per class. Each token is drawn from the class's topic
/// pool with probability `topic_rate`, otherwise from the shared background;
/// lengths are uniform in `[min_tokens, max_tokens]`.
pub fn gen_synthetic_corpus(
    spec: &CorpusSpec,
    vocab: &EmbeddingTable,
) -> Result<(Vec<Document>, Vec<Document>), EmbeddingError> {
    let (phish_pool, legit_pool, background) = topic_pools(vocab, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Mildly Zipfian word frequencies inside each pool.
    let zipf = |n: usize| WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 2.0))).expect("nonempty");
    let (tz, bz) = (zipf(spec.topic_pool), zipf(spec.background_pool));
    let make = |label: Label, pool: &[String], rng: &mut ChaCha8Rng| -> Vec<Document> {
        (0..spec.n_per_class)
            .map(|i| {
                let len = rng.gen_range(spec.min_tokens..=spec.max_tokens);
                let words: Vec<&str> = (0..len)
                    .map(|_| {
                        if rng.gen_bool(spec.topic_rate) {
                            pool[tz.sample(rng)].as_str()
                        } else {
                            background[bz.sample(rng)].as_str()
                        }
                    })
                    .collect();
                let tag = match label {
                    Label::Phishing => "phishing",
                    Label::Legitimate => "legitimate",
                };
                Document {
                    source_id: format!("synthetic/{tag}/{i:05}"),
                    label,
                    text: words.join(" "),
                }
            })
            .collect()
    };
    let phish = make(Label::Phishing, &phish_pool, &mut rng);
    let legit = make(Label::Legitimate, &legit_pool, &mut rng);
    Ok((phish, legit))
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
    "br", "cr", "dr", "fl", "gr", "pl", "pr", "st", "tr", "sk", "sl", "sp",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "io"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "m", "k", "t", "x"];

/// Pseudo-word table of `n_words` rows. Every word is a fixed point of the text
/// pipeline. Vectors are generated from `factors` latent Gaussian factors mapped
/// through a fixed random matrix plus isotropic noise, so the table has the
/// low-rank structure of trained embeddings.
pub fn synthetic_embedding(
    n_words: usize,
    dim: usize,
    factors: usize,
    seed: u64,
) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pipeline = TextPipeline::default();
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::with_capacity(n_words);
    while words.len() < n_words {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
            w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        }
        let stable = pipeline.process_text(&w) == [w.clone()];
        if stable && seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let scale = 1.0 / (factors.max(1) as f64).sqrt();
    let mix: Vec<f64> = (0..dim * factors).map(|_| normal() * scale).collect();
    let pairs: Vec<(String, Vec<f64>)> = words
        .into_iter()
        .map(|w| {
            let z: Vec<f64> = (0..factors).map(|_| normal()).collect();
            let v = (0..dim)
                .map(|j| {
                    let signal: f64 = (0..factors).map(|f| mix[j * factors + f] * z[f]).sum();
                    0.5 * signal + 0.1 * normal()
                })
                .collect();
            (w, v)
        })
        .collect();
    EmbeddingTable::from_pairs(dim, pairs).expect("generated rows have the declared dimension")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        synthetic_embedding(2500, 16, 4, 7)
    }

    #[test]
    fn synthetic_words_survive_the_pipeline() {
        let t = table();
        let p = TextPipeline::default();
        assert_eq!(t.vocab_size(), 2500);
        for w in t.words().iter().take(300) {
            assert_eq!(p.process_text(w), vec![w.clone()]);
        }
    }

    #[test]
    fn pools_are_disjoint() {
        let t = table();
        let spec = CorpusSpec::new(5, 1);
        let (p, l, b) = topic_pools(&t, &spec).unwrap();
        let all: std::collections::HashSet<&String> = p.iter().chain(&l).chain(&b).collect();
        assert_eq!(all.len(), p.len() + l.len() + b.len());
    }

    #[test]
    fn corpus_shape_and_determinism() {
        let t = table();
        let spec = CorpusSpec::new(594, 3);
        let (p, l) = gen_synthetic_corpus(&spec, &t).unwrap();
        assert_eq!(p.len() + l.len(), 1188);
        assert!(p.iter().all(|d| d.label == Label::Phishing));
        for d in p.iter().chain(&l) {
            let n = d.text.split(' ').count();
            assert!((10..=250).contains(&n));
        }
        assert_eq!(gen_synthetic_corpus(&spec, &t).unwrap(), (p, l));
    }

    #[test]
    fn too_small_vocabulary_is_an_error() {
        let t = synthetic_embedding(50, 8, 2, 1);
        assert!(gen_synthetic_corpus(&CorpusSpec::new(3, 0), &t).is_err());
    }
}
