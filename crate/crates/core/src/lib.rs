//! Federated phishing-email classification: ingestion, text normalization,
//! embedding lookup, a BiLSTM classifier, client partitioning, federated
//! averaging and an experiment harness.

pub mod embedding;
pub mod federated;
pub mod harness;
pub mod ingest;
pub mod nn;
pub mod partition;
pub mod text;
