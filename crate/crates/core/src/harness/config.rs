//! Experiment configuration: a TOML file of keys mirroring the CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::nn::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Centralized,
    Standalone,
    Federated,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Standalone => "standalone",
            Mode::Federated => "federated",
        }
    }
}

/// Client counts of the experiment grid and the selection size tied to each.
pub const GRID_CLIENTS: [(usize, usize); 3] = [(10, 3), (20, 6), (50, 15)];
pub const GRID_ALPHAS: [f64; 4] = [0.0, 0.2, 0.6, 1.0];

/// Selection size paired with `clients` in the grid, if it is a grid client count.
pub fn grid_selected(clients: usize) -> Option<usize> {
    GRID_CLIENTS
        .iter()
        .find(|(k, _)| *k == clients)
        .map(|&(_, s)| s)
}

/// Parameters of the generated corpus used when no email directories are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub corpus_seed: u64,
    /// Words in the generated embedding (ignored when an embedding file is given).
    pub vocab_size: usize,
    pub embedding_seed: u64,
    pub factors: usize,
    pub topic_pool: usize,
    pub background_pool: usize,
    pub topic_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_per_class: 594,
            corpus_seed: 7,
            vocab_size: 6000,
            embedding_seed: 42,
            factors: 8,
            topic_pool: 150,
            background_pool: 1500,
            topic_rate: 0.07,
        }
    }
}

/// One experiment: a training mode, the client setup, data sources and
/// hyperparameters, repeated over `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub clients: usize,
    pub selected: usize,
    pub alpha: f64,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub phishing_dir: Option<PathBuf>,
    pub legitimate_dir: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    pub embedding_dim: usize,
    /// Replacement stop-word list (one word per line).
    pub stopwords: Option<PathBuf>,
    /// Replacement lemma exception table (`word lemma` per line).
    pub lemma_exceptions: Option<PathBuf>,
    pub lr: f64,
    pub batch: usize,
    pub epochs_local: usize,
    pub patience: usize,
    pub hidden: usize,
    pub dense: usize,
    pub lstm_layers: usize,
    /// Gradient-norm clipping, for divergence debugging only.
    pub clip_norm: Option<f64>,
    /// Save the global model every this many rounds (0 disables).
    pub checkpoint_every: usize,
    /// Not part of the fingerprint.
    pub output_dir: PathBuf,
    pub synthetic: SyntheticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let full = Architecture::full();
        Self {
            mode: Mode::Federated,
            clients: 10,
            selected: 3,
            alpha: 0.0,
            rounds: 50,
            seeds: (0..10).collect(),
            phishing_dir: None,
            legitimate_dir: None,
            embedding: None,
            embedding_dim: full.input_dim,
            stopwords: None,
            lemma_exceptions: None,
            lr: 1e-4,
            batch: 16,
            epochs_local: 1,
            patience: 10,
            hidden: full.hidden,
            dense: full.dense,
            lstm_layers: full.lstm_layers,
            clip_norm: None,
            checkpoint_every: 0,
            output_dir: PathBuf::from("out"),
            synthetic: SyntheticConfig::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| invalid("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::DataUnreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            seq_len: crate::embedding::MAX_LEN,
            input_dim: self.embedding_dim,
            hidden: self.hidden,
            lstm_layers: self.lstm_layers,
            dense: self.dense,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must not be empty"));
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            return Err(invalid("seeds", "must be distinct"));
        }
        if self.clients == 0 {
            return Err(invalid("clients", "must be at least 1"));
        }
        if self.selected == 0 || self.selected > self.clients {
            return Err(invalid(
                "selected",
                format!("must lie in 1..={} (clients)", self.clients),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha", "must lie in [0, 1]"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be a finite non-negative number"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("clip_norm", "must be a finite positive number"));
            }
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(invalid("embedding_dim", "must be at least 1"));
        }
        for (field, v) in [
            ("hidden", self.hidden),
            ("dense", self.dense),
            ("lstm_layers", self.lstm_layers),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if self.phishing_dir.is_some() != self.legitimate_dir.is_some() {
            return Err(invalid(
                "phishing_dir",
                "phishing_dir and legitimate_dir must be given together",
            ));
        }
        if self.phishing_dir.is_some() && self.embedding.is_none() {
            return Err(invalid("embedding", "required when email directories are given"));
        }
        let s = &self.synthetic;
        if self.phishing_dir.is_none() {
            if s.n_per_class == 0 {
                return Err(invalid("synthetic.n_per_class", "must be at least 1"));
            }
            if !(0.0..=1.0).contains(&s.topic_rate) {
                return Err(invalid("synthetic.topic_rate", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical TOML of every field except `output_dir`.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// File-name stem identifying the mode and client setup.
    pub fn tag(&self) -> String {
        match self.mode {
            Mode::Centralized => "centralized".to_string(),
            Mode::Standalone => format!("standalone_K{}_a{}", self.clients, self.alpha),
            Mode::Federated => format!(
                "federated_K{}_S{}_a{}",
                self.clients, self.selected, self.alpha
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!((c.clients, c.selected, c.rounds, c.seeds.len()), (10, 3, 50, 10));
        assert_eq!((c.lr, c.batch, c.epochs_local, c.patience), (1e-4, 16, 1, 10));
        assert_eq!(c.architecture(), Architecture::full());
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ExperimentConfig::from_toml_str(
            "mode = \"standalone\"\nclients = 20\nselected = 6\nalpha = 0.6\n[synthetic]\ntopic_rate = 0.2\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Standalone);
        assert_eq!(c.synthetic.topic_rate, 0.2);
        assert_eq!(c.rounds, 50);
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("rounds = 3\nbogus = 1\n"),
            Err(HarnessError::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn validation_names_the_field() {
        let field = |c: ExperimentConfig| match c.validate() {
            Err(HarnessError::ConfigInvalid { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let base = ExperimentConfig::default();
        assert_eq!(field(ExperimentConfig { rounds: 0, ..base.clone() }), "rounds");
        assert_eq!(field(ExperimentConfig { seeds: vec![], ..base.clone() }), "seeds");
        assert_eq!(field(ExperimentConfig { selected: 11, ..base.clone() }), "selected");
        assert_eq!(field(ExperimentConfig { alpha: 1.5, ..base.clone() }), "alpha");
        assert_eq!(
            field(ExperimentConfig { phishing_dir: Some("p".into()), ..base }),
            "phishing_dir"
        );
    }

    #[test]
    fn fingerprint_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { output_dir: "elsewhere".into(), ..a.clone() };
        let c = ExperimentConfig { alpha: 0.2, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn grid_pairs() {
        assert_eq!(grid_selected(10), Some(3));
        assert_eq!(grid_selected(20), Some(6));
        assert_eq!(grid_selected(50), Some(15));
        assert_eq!(grid_selected(7), None);
    }
}
