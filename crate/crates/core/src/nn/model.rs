//! Full classifier: stacked BiLSTM → dense ReLU → sigmoid output.

use super::linalg::{gemm, sigmoid, View};
use super::lstm::{dir_backward, dir_forward, DirCache};
use super::params::{cell_len, Direction, ModelParams, ParamVector};
use super::ModelError;

/// Probability clamp applied before the logarithm in the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// A batch of feature sequences stored time-major: `T × B × d`.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub steps: usize,
    pub batch: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl BatchInput {
    /// Interleaves per-sample `T × d` row-major matrices into time-major layout.
    pub fn from_samples<S: AsRef<[f64]>>(
        samples: &[S],
        steps: usize,
        dim: usize,
    ) -> Result<Self, ModelError> {
        let batch = samples.len();
        let mut data = vec![0.0; steps * batch * dim];
        for (b, s) in samples.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != steps * dim {
                return Err(ModelError::ShapeMismatch(format!(
                    "sample {b} has {} values, expected {steps}×{dim}",
                    s.len()
                )));
            }
            for t in 0..steps {
                data[(t * batch + b) * dim..(t * batch + b + 1) * dim]
                    .copy_from_slice(&s[t * dim..(t + 1) * dim]);
            }
        }
        Ok(Self {
            steps,
            batch,
            dim,
            data,
        })
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    fwd: DirCache,
    bwd: DirCache,
}

/// Every intermediate activation needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
    feat: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn check_input(x: &BatchInput, params: &ModelParams) -> Result<(), ModelError> {
    let arch = params.arch();
    if x.steps != arch.seq_len || x.dim != arch.input_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "input is {}×{}, model expects {}×{}",
            x.steps, x.dim, arch.seq_len, arch.input_dim
        )));
    }
    if x.batch == 0 || x.data.len() != x.steps * x.batch * x.dim {
        return Err(ModelError::ShapeMismatch("empty or ragged batch".into()));
    }
    Ok(())
}

/// Batched forward pass that keeps the activation cache.
pub fn forward_batch(x: BatchInput, params: &ModelParams) -> Result<ForwardCache, ModelError> {
    check_input(&x, params)?;
    let arch = *params.arch();
    let (steps, batch, h) = (x.steps, x.batch, arch.hidden);
    let mut layers = Vec::with_capacity(arch.lstm_layers);
    let mut input = x.data;
    for layer in 0..arch.lstm_layers {
        let fwd = dir_forward(
            &input,
            steps,
            batch,
            params.cell(layer, Direction::Forward),
            false,
        );
        let bwd = dir_forward(
            &input,
            steps,
            batch,
            params.cell(layer, Direction::Backward),
            true,
        );
        let next = if layer + 1 < arch.lstm_layers {
            let mut out = vec![0.0; steps * batch * 2 * h];
            for (row, o) in out.chunks_exact_mut(2 * h).enumerate() {
                o[..h].copy_from_slice(&fwd.h[row * h..(row + 1) * h]);
                o[h..].copy_from_slice(&bwd.h[row * h..(row + 1) * h]);
            }
            out
        } else {
            Vec::new()
        };
        layers.push(LayerCache { input, fwd, bwd });
        input = next;
    }

    let last = layers.last().expect("at least one layer");
    let mut feat = vec![0.0; batch * 2 * h];
    for b in 0..batch {
        feat[b * 2 * h..b * 2 * h + h].copy_from_slice(&last.fwd.final_h()[b * h..(b + 1) * h]);
        feat[b * 2 * h + h..(b + 1) * 2 * h]
            .copy_from_slice(&last.bwd.final_h()[b * h..(b + 1) * h]);
    }
    let n = arch.dense;
    let mut z1 = vec![0.0; batch * n];
    for row in z1.chunks_exact_mut(n) {
        row.copy_from_slice(params.dense1_b());
    }
    gemm(
        View::rm(&feat, batch, 2 * h),
        View::rm(params.dense1_w(), 2 * h, n),
        1.0,
        &mut z1,
        n,
        1,
    );
    let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
    let probs = a1
        .chunks_exact(n)
        .map(|row| {
            let z2 = params.out_b()
                + row
                    .iter()
                    .zip(params.out_w())
                    .map(|(a, w)| a * w)
                    .sum::<f64>();
            sigmoid(z2)
        })
        .collect();
    Ok(ForwardCache {
        batch,
        layers,
        feat,
        z1,
        a1,
        probs,
    })
}

/// Forward pass for a single `T × d` feature matrix.
pub fn forward(features: &[f64], params: &ModelParams) -> Result<(f64, ForwardCache), ModelError> {
    let arch = params.arch();
    let x = BatchInput::from_samples(&[features], arch.seq_len, arch.input_dim)?;
    let cache = forward_batch(x, params)?;
    Ok((cache.probs[0], cache))
}

/// Inference only; processes the batch in chunks to bound memory.
pub fn predict(x: &BatchInput, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    const CHUNK: usize = 32;
    check_input(x, params)?;
    let mut probs = Vec::with_capacity(x.batch);
    let mut start = 0;
    while start < x.batch {
        let end = (start + CHUNK).min(x.batch);
        let sub = slice_batch(x, start, end);
        probs.extend(forward_batch(sub, params)?.probs);
        start = end;
    }
    Ok(probs)
}

fn slice_batch(x: &BatchInput, start: usize, end: usize) -> BatchInput {
    let nb = end - start;
    let mut data = Vec::with_capacity(x.steps * nb * x.dim);
    for t in 0..x.steps {
        let row0 = (t * x.batch + start) * x.dim;
        data.extend_from_slice(&x.data[row0..row0 + nb * x.dim]);
    }
    BatchInput {
        steps: x.steps,
        batch: nb,
        dim: x.dim,
        data,
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = clamp_prob(p);
    let y = f64::from(y);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean loss over the cached batch.
pub fn batch_loss(cache: &ForwardCache, labels: &[u8]) -> f64 {
    cache
        .probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_loss(p, y))
        .sum::<f64>()
        / cache.batch as f64
}

/// Exact gradient of the mean batch loss w.r.t. every parameter, canonical order.
pub fn backward(
    cache: &ForwardCache,
    labels: &[u8],
    params: &ModelParams,
) -> Result<ParamVector, ModelError> {
    let arch = *params.arch();
    let batch = cache.batch;
    if labels.len() != batch {
        return Err(ModelError::LengthMismatch {
            expected: batch,
            actual: labels.len(),
        });
    }
    let (h, n) = (arch.hidden, arch.dense);
    let steps = arch.seq_len;
    let mut grad = vec![0.0; arch.param_count()];

    // Output neuron: d(mean loss)/dz2 = (p − y)/B unless the clamp is active.
    let dz2: Vec<f64> = cache
        .probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
                0.0
            } else {
                (p - f64::from(y)) / batch as f64
            }
        })
        .collect();
    let ow = arch.out_w_offset();
    for (b, d) in dz2.iter().enumerate() {
        for j in 0..n {
            grad[ow + j] += d * cache.a1[b * n + j];
        }
        grad[arch.out_b_offset()] += d;
    }
    let mut dz1 = vec![0.0; batch * n];
    for b in 0..batch {
        for j in 0..n {
            if cache.z1[b * n + j] > 0.0 {
                dz1[b * n + j] = dz2[b] * params.out_w()[j];
            }
        }
    }
    let d1w = arch.dense1_w_offset();
    gemm(
        View::rm(&cache.feat, batch, 2 * h).t(),
        View::rm(&dz1, batch, n),
        1.0,
        &mut grad[d1w..d1w + 2 * h * n],
        n,
        1,
    );
    let d1b = arch.dense1_b_offset();
    for row in dz1.chunks_exact(n) {
        for (g, d) in grad[d1b..d1b + n].iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut dfeat = vec![0.0; batch * 2 * h];
    gemm(
        View::rm(&dz1, batch, n),
        View::rm(params.dense1_w(), 2 * h, n).t(),
        0.0,
        &mut dfeat,
        2 * h,
        1,
    );

    // Last BiLSTM layer only exposes each direction's final state.
    let bh = batch * h;
    let mut dh_f = vec![0.0; steps * bh];
    let mut dh_b = vec![0.0; steps * bh];
    for b in 0..batch {
        dh_f[(steps - 1) * bh + b * h..(steps - 1) * bh + (b + 1) * h]
            .copy_from_slice(&dfeat[b * 2 * h..b * 2 * h + h]);
        dh_b[b * h..(b + 1) * h].copy_from_slice(&dfeat[b * 2 * h + h..(b + 1) * 2 * h]);
    }

    for layer in (0..arch.lstm_layers).rev() {
        let lc = &cache.layers[layer];
        let d_in = arch.layer_input_dim(layer);
        let clen = cell_len(d_in, h);
        let mut dx = vec![0.0; steps * batch * d_in];
        let off_f = arch.cell_offset(layer, Direction::Forward);
        let off_b = arch.cell_offset(layer, Direction::Backward);
        dir_backward(
            &lc.input,
            &lc.fwd,
            params.cell(layer, Direction::Forward),
            &dh_f,
            &mut grad[off_f..off_f + clen],
            &mut dx,
        );
        dir_backward(
            &lc.input,
            &lc.bwd,
            params.cell(layer, Direction::Backward),
            &dh_b,
            &mut grad[off_b..off_b + clen],
            &mut dx,
        );
        if layer > 0 {
            for (row, d) in dx.chunks_exact(2 * h).enumerate() {
                dh_f[row * h..(row + 1) * h].copy_from_slice(&d[..h]);
                dh_b[row * h..(row + 1) * h].copy_from_slice(&d[h..]);
            }
        }
    }
    Ok(ParamVector(grad))
}

/// Mean loss and its gradient for one batch.
pub fn loss_and_gradient(
    params: &ModelParams,
    x: BatchInput,
    labels: &[u8],
) -> Result<(f64, ParamVector), ModelError> {
    let cache = forward_batch(x, params)?;
    let loss = batch_loss(&cache, labels);
    let grad = backward(&cache, labels, params)?;
    Ok((loss, grad))
}
