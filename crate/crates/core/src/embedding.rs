//! Frozen word embedding: GloVe text loader, vocabulary, fixed-length encoding.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::Label;
use crate::nn::BatchInput;
use crate::text::ProcessedText;

pub const PAD_INDEX: u32 = 0;
pub const MAX_LEN: usize = 200;
pub const MIN_LEN: usize = 10;
pub const EMBEDDING_DIM: usize = 100;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse {token:?} as a finite number")]
    ParseFailure { line: usize, token: String },
    #[error("embedding file contains no vectors")]
    Empty,
    #[error("index {index} outside table with {rows} rows")]
    IndexOutOfRange { index: u32, rows: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Word → row table. Row 0 is PAD (zeros), rows `1..=n` are the loaded words in
/// file order, row `n + 1` is the OOV vector (mean of all loaded vectors).
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vocab: HashMap<String, u32>,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs; later duplicates are ignored.
    pub fn from_pairs<I>(dim: usize, pairs: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut words = Vec::new();
        let mut vocab = HashMap::new();
        let mut vectors = vec![0.0; dim];
        for (n, (word, vec)) in pairs.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    line: n + 1,
                    expected: dim,
                    found: vec.len(),
                });
            }
            if let Some(bad) = vec.iter().find(|v| !v.is_finite()) {
                return Err(EmbeddingError::ParseFailure {
                    line: n + 1,
                    token: bad.to_string(),
                });
            }
            if vocab.contains_key(&word) {
                continue;
            }
            vocab.insert(word.clone(), words.len() as u32 + 1);
            words.push(word);
            vectors.extend_from_slice(&vec);
        }
        if words.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        let n = words.len() as f64;
        let mut oov = vec![0.0; dim];
        for row in vectors[dim..].chunks_exact(dim) {
            for (o, v) in oov.iter_mut().zip(row) {
                *o += v;
            }
        }
        oov.iter_mut().for_each(|o| *o /= n);
        vectors.extend_from_slice(&oov);
        Ok(Self {
            dim,
            words,
            vocab,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of loaded words (excludes PAD and OOV rows).
    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn rows(&self) -> usize {
        self.words.len() + 2
    }

    pub fn oov_index(&self) -> u32 {
        self.words.len() as u32 + 1
    }

    pub fn index_of(&self, word: &str) -> Option<u32> {
        self.vocab.get(word).copied()
    }

    /// Loaded words in row order (row `i + 1` holds `words()[i]`).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row(&self, index: u32) -> Result<&[f64], EmbeddingError> {
        let i = index as usize;
        if i >= self.rows() {
            return Err(EmbeddingError::IndexOutOfRange {
                index,
                rows: self.rows(),
            });
        }
        Ok(&self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// SHA-256 over dimension, vocabulary, and vector bits.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update([0u8]);
        }
        for v in &self.vectors {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Writes the loaded words in GloVe text format.
    pub fn write_glove<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, w) in self.words.iter().enumerate() {
            write!(out, "{w}")?;
            for v in &self.vectors[(i + 1) * self.dim..(i + 2) * self.dim] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Reads GloVe text format: `word v1 … vd` per line, space separated.
pub fn load_embedding<R: BufRead>(reader: R, dim: usize) -> Result<EmbeddingTable, EmbeddingError> {
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let word = parts.next().unwrap_or_default().to_string();
        let mut vec = Vec::with_capacity(dim);
        for tok in parts {
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => vec.push(v),
                _ => {
                    return Err(EmbeddingError::ParseFailure {
                        line: n + 1,
                        token: tok.to_string(),
                    })
                }
            }
        }
        if vec.len() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                line: n + 1,
                expected: dim,
                found: vec.len(),
            });
        }
        pairs.push((word, vec));
    }
    EmbeddingTable::from_pairs(dim, pairs)
}

/// Fixed-length index sequence for one email.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedSample {
    pub indices: Vec<u32>,
    pub true_length: usize,
    pub label: Label,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encoded {
    Sample(EncodedSample),
    /// Fewer than the minimum number of tokens.
    Rejected { tokens: usize },
}

impl Encoded {
    pub fn sample(self) -> Option<EncodedSample> {
        match self {
            Encoded::Sample(s) => Some(s),
            Encoded::Rejected { .. } => None,
        }
    }
}

/// Maps tokens to rows, truncates past `max_len`, post-pads with PAD, and rejects
/// texts shorter than `min_len` tokens.
pub fn encode(
    text: &ProcessedText,
    table: &EmbeddingTable,
    max_len: usize,
    min_len: usize,
) -> Encoded {
    if text.tokens.len() < min_len {
        return Encoded::Rejected {
            tokens: text.tokens.len(),
        };
    }
    let oov = table.oov_index();
    let mut indices: Vec<u32> = text
        .tokens
        .iter()
        .take(max_len)
        .map(|t| table.index_of(t).unwrap_or(oov))
        .collect();
    let true_length = indices.len();
    indices.resize(max_len, PAD_INDEX);
    Encoded::Sample(EncodedSample {
        indices,
        true_length,
        label: text.label,
        source_id: text.source_id.clone(),
    })
}

/// `T × d` feature matrix (row-major) for one sample.
pub fn embed(sample: &EncodedSample, table: &EmbeddingTable) -> Result<Vec<f64>, EmbeddingError> {
    let mut out = Vec::with_capacity(sample.indices.len() * table.dim);
    for &i in &sample.indices {
        out.extend_from_slice(table.row(i)?);
    }
    Ok(out)
}

/// Time-major batch features for the model, gathered straight from the table.
pub fn embed_batch(
    samples: &[&EncodedSample],
    table: &EmbeddingTable,
) -> Result<BatchInput, EmbeddingError> {
    let batch = samples.len();
    let steps = samples.first().map_or(0, |s| s.indices.len());
    let d = table.dim;
    let mut data = vec![0.0; steps * batch * d];
    for (b, s) in samples.iter().enumerate() {
        if s.indices.len() != steps {
            return Err(EmbeddingError::DimensionMismatch {
                line: b,
                expected: steps,
                found: s.indices.len(),
            });
        }
        for (t, &idx) in s.indices.iter().enumerate() {
            data[(t * batch + b) * d..(t * batch + b + 1) * d].copy_from_slice(table.row(idx)?);
        }
    }
    Ok(BatchInput {
        steps,
        batch,
        dim: d,
        data,
    })
}

/// Drops samples whose `(indices, label)` already appeared; keeps first occurrence.
pub fn dedupe(samples: Vec<EncodedSample>) -> Vec<EncodedSample> {
    let mut seen: HashSet<(Vec<u32>, Label)> = HashSet::new();
    samples
        .into_iter()
        .filter(|s| seen.insert((s.indices.clone(), s.label)))
        .collect()
}
