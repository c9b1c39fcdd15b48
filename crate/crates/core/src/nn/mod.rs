//! The task model: three stacked BiLSTM layers, a ReLU dense layer and a sigmoid
//! output, with exact backpropagation through time and an Adam optimizer.
//!
//! All arithmetic is `f64`. Parameters live in one flat vector in canonical order
//! (see [`ModelParams`]) so that optimizer steps and federated averaging operate on
//! plain slices.

mod adam;
mod checkpoint;
mod gradcheck;
mod linalg;
mod lstm;
mod model;
mod params;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradient, random_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use lstm::{bilstm_layer, lstm_cell_step, LayerOutput};
pub use model::{
    backward, batch_loss, bce_loss, forward, forward_batch, loss_and_gradient, predict, BatchInput,
    ForwardCache, PROB_CLAMP,
};
pub use params::{
    init_params, Architecture, CellRef, Direction, Gate, LstmCellParams, ModelParams, ParamVector,
};

use thiserror::Error;

use crate::embedding::{embed_batch, EmbeddingError, EmbeddingTable, EncodedSample};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid architecture {0:?}")]
    InvalidArchitecture(Architecture),
    #[error("checkpoint was written for {found:?}, expected {expected:?}")]
    ArchitectureMismatch {
        expected: Architecture,
        found: Architecture,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot evaluate on an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Predicted phishing probabilities for `samples`.
pub fn predict_samples(
    params: &ModelParams,
    samples: &[EncodedSample],
    table: &EmbeddingTable,
) -> Result<Vec<f64>, ModelError> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let refs: Vec<&EncodedSample> = chunk.iter().collect();
        out.extend(predict(&embed_batch(&refs, table)?, params)?);
    }
    Ok(out)
}

/// Fraction of samples where `p ≥ 0.5` agrees with the label.
pub fn evaluate(
    params: &ModelParams,
    samples: &[EncodedSample],
    table: &EmbeddingTable,
) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let probs = predict_samples(params, samples, table)?;
    Ok(accuracy(&probs, samples.iter().map(|s| s.label.as_u8())))
}

/// Accuracy of thresholded probabilities against labels.
pub fn accuracy(probs: &[f64], labels: impl IntoIterator<Item = u8>) -> f64 {
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, y)| u8::from(p >= 0.5) == *y)
        .count();
    correct as f64 / probs.len() as f64
}

/// Mean loss over `samples`.
pub fn mean_loss(
    params: &ModelParams,
    samples: &[EncodedSample],
    table: &EmbeddingTable,
) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let probs = predict_samples(params, samples, table)?;
    Ok(probs
        .iter()
        .zip(samples)
        .map(|(&p, s)| bce_loss(p, s.label.as_u8()))
        .sum::<f64>()
        / samples.len() as f64)
}
