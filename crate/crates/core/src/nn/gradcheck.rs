//! Central finite-difference verification of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{batch_loss, forward_batch, loss_and_gradient, BatchInput};
use super::params::{init_params, Architecture, ModelParams};
use super::ModelError;

/// Denominator floor for the relative error of near-zero gradient coordinates.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient with central differences over every coordinate.
pub fn check_gradient(
    params: &ModelParams,
    x: &BatchInput,
    labels: &[u8],
    step: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, grad) = loss_and_gradient(params, x.clone(), labels)?;
    let loss_at = |p: &ModelParams| -> Result<f64, ModelError> {
        Ok(batch_loss(&forward_batch(x.clone(), p)?, labels))
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        coordinates: grad.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for i in 0..grad.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let up = loss_at(&probe)?;
        probe.values_mut()[i] = orig - step;
        let down = loss_at(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(grad.0[i], numeric);
        if err > report.max_rel_error || i == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic_at_worst = grad.0[i];
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

/// Random instance on `arch`: seeded parameters, inputs, and a mixed-label batch.
pub fn random_check(
    arch: Architecture,
    batch: usize,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport, ModelError> {
    let params = init_params(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let samples: Vec<Vec<f64>> = (0..batch)
        .map(|_| {
            (0..arch.seq_len * arch.input_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let labels: Vec<u8> = (0..batch).map(|b| (b % 2) as u8).collect();
    let x = BatchInput::from_samples(&samples, arch.seq_len, arch.input_dim)?;
    check_gradient(&params, &x, &labels, step)
}
