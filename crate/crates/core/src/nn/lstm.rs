//! LSTM cell, batched single-direction recurrence with exact BPTT, and the
//! bidirectional layer built from two directions.

use super::linalg::{gemm, sigmoid, View};
use super::params::{gate_len, CellRef, Gate};
use super::ModelError;

/// One LSTM step for a single sequence position.
///
/// `i = σ(W_i x + U_i h + b_i)`, `f`, `o` likewise, `g = tanh(W_g x + U_g h + b_g)`,
/// `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
pub fn lstm_cell_step(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    p: CellRef<'_>,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if x.len() != p.d_in || h.len() != p.d_h || c.len() != p.d_h {
        return Err(ModelError::ShapeMismatch(format!(
            "cell expects x[{}], h[{}], c[{}]; got x[{}], h[{}], c[{}]",
            p.d_in,
            p.d_h,
            p.d_h,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let d_h = p.d_h;
    let pre = |g: Gate, j: usize| -> f64 {
        let w = p.w(g);
        let u = p.u(g);
        let mut s = p.b(g)[j];
        for (k, xk) in x.iter().enumerate() {
            s += xk * w[k * d_h + j];
        }
        for (k, hk) in h.iter().enumerate() {
            s += hk * u[k * d_h + j];
        }
        s
    };
    let mut h_new = vec![0.0; d_h];
    let mut c_new = vec![0.0; d_h];
    for j in 0..d_h {
        let i = sigmoid(pre(Gate::Input, j));
        let f = sigmoid(pre(Gate::Forget, j));
        let g = pre(Gate::Candidate, j).tanh();
        let o = sigmoid(pre(Gate::Output, j));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    Ok((h_new, c_new))
}

/// Activations of one direction over a time-major batch (`T × B × ·`).
#[derive(Debug, Clone)]
pub(crate) struct DirCache {
    pub reverse: bool,
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
    /// Activated gates, `T × B × 4H`, blocks ordered input/forget/candidate/output.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tc: Vec<f64>,
    /// Hidden state at each sequence position, `T × B × H`.
    pub h: Vec<f64>,
}

impl DirCache {
    #[inline]
    fn position(&self, step: usize) -> usize {
        if self.reverse {
            self.steps - 1 - step
        } else {
            step
        }
    }

    /// Hidden state after the direction consumed its final input, `B × H`.
    pub fn final_h(&self) -> &[f64] {
        let pos = self.position(self.steps - 1);
        let bh = self.batch * self.hidden;
        &self.h[pos * bh..(pos + 1) * bh]
    }
}

/// Runs one direction over `x` (`T × B × d_in`, time-major) from zero state.
pub(crate) fn dir_forward(
    x: &[f64],
    steps: usize,
    batch: usize,
    cell: CellRef<'_>,
    reverse: bool,
) -> DirCache {
    let (d_in, h) = (cell.d_in, cell.d_h);
    let g4 = 4 * h;
    let rows = steps * batch;
    assert_eq!(x.len(), rows * d_in);

    let mut gates = vec![0.0; rows * g4];
    for g in Gate::ALL {
        gemm(
            View::rm(x, rows, d_in),
            View::rm(cell.w(g), d_in, h),
            0.0,
            &mut gates[g as usize * h..],
            g4,
            1,
        );
    }
    for row in gates.chunks_exact_mut(g4) {
        for g in Gate::ALL {
            let b = cell.b(g);
            for (z, bj) in row[g as usize * h..(g as usize + 1) * h].iter_mut().zip(b) {
                *z += bj;
            }
        }
    }

    let bh = batch * h;
    let mut c_all = vec![0.0; rows * h];
    let mut tc_all = vec![0.0; rows * h];
    let mut h_all = vec![0.0; rows * h];
    let mut prev: Option<usize> = None;
    for s in 0..steps {
        let pos = if reverse { steps - 1 - s } else { s };
        let z = &mut gates[pos * batch * g4..(pos + 1) * batch * g4];
        if let Some(pp) = prev {
            let hp = &h_all[pp * bh..(pp + 1) * bh];
            for g in Gate::ALL {
                gemm(
                    View::rm(hp, batch, h),
                    View::rm(cell.u(g), h, h),
                    1.0,
                    &mut z[g as usize * h..],
                    g4,
                    1,
                );
            }
        }
        for bi in 0..batch {
            let zr = &mut z[bi * g4..(bi + 1) * g4];
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                zr[j] = i;
                zr[h + j] = f;
                zr[2 * h + j] = g;
                zr[3 * h + j] = o;
                let idx = pos * bh + bi * h + j;
                let c_prev = prev.map_or(0.0, |pp| c_all[pp * bh + bi * h + j]);
                let c = f * c_prev + i * g;
                let tc = c.tanh();
                c_all[idx] = c;
                tc_all[idx] = tc;
                h_all[idx] = o * tc;
            }
        }
        prev = Some(pos);
    }
    DirCache {
        reverse,
        steps,
        batch,
        hidden: h,
        gates,
        c: c_all,
        tc: tc_all,
        h: h_all,
    }
}

/// Backpropagates `dh_out` (`T × B × H`, gradient w.r.t. the hidden state at each
/// position) through one direction. Accumulates parameter gradients into
/// `grad_cell` (canonical cell layout) and input gradients into `dx`.
pub(crate) fn dir_backward(
    x: &[f64],
    cache: &DirCache,
    cell: CellRef<'_>,
    dh_out: &[f64],
    grad_cell: &mut [f64],
    dx: &mut [f64],
) {
    let (d_in, h) = (cell.d_in, cell.d_h);
    let (steps, batch) = (cache.steps, cache.batch);
    let g4 = 4 * h;
    let bh = batch * h;
    let rows = steps * batch;
    assert_eq!(dh_out.len(), rows * h);
    assert_eq!(dx.len(), rows * d_in);
    assert_eq!(grad_cell.len(), 4 * gate_len(d_in, h));

    let mut dz = vec![0.0; rows * g4];
    let mut dh_next = vec![0.0; bh];
    let mut dc_next = vec![0.0; bh];
    for s in (0..steps).rev() {
        let pos = cache.position(s);
        let prev = if s > 0 { Some(cache.position(s - 1)) } else { None };
        for bi in 0..batch {
            let gr = &cache.gates[(pos * batch + bi) * g4..(pos * batch + bi + 1) * g4];
            let dzr = &mut dz[(pos * batch + bi) * g4..(pos * batch + bi + 1) * g4];
            for j in 0..h {
                let idx = pos * bh + bi * h + j;
                let (gi, gf, gg, go) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let tc = cache.tc[idx];
                let c_prev = prev.map_or(0.0, |pp| cache.c[pp * bh + bi * h + j]);
                let dh = dh_out[idx] + dh_next[bi * h + j];
                let d_o = dh * tc;
                let dc = dh * go * (1.0 - tc * tc) + dc_next[bi * h + j];
                let di = dc * gg;
                let dg = dc * gi;
                let df = dc * c_prev;
                dc_next[bi * h + j] = dc * gf;
                dzr[j] = di * gi * (1.0 - gi);
                dzr[h + j] = df * gf * (1.0 - gf);
                dzr[2 * h + j] = dg * (1.0 - gg * gg);
                dzr[3 * h + j] = d_o * go * (1.0 - go);
            }
        }
        if s > 0 {
            let dzt = &dz[pos * batch * g4..(pos + 1) * batch * g4];
            for g in Gate::ALL {
                gemm(
                    View::strided(&dzt[g as usize * h..], batch, h, g4, 1),
                    View::rm(cell.u(g), h, h).t(),
                    if g == Gate::Input { 0.0 } else { 1.0 },
                    &mut dh_next,
                    h,
                    1,
                );
            }
        }
    }

    let glen = gate_len(d_in, h);
    for g in Gate::ALL {
        let base = g as usize * glen;
        let gcol = g as usize * h;
        let dzg = View::strided(&dz[gcol..], rows, h, g4, 1);
        let (gw, rest) = grad_cell[base..base + glen].split_at_mut(d_in * h);
        let (gu, gb) = rest.split_at_mut(h * h);
        gemm(View::rm(x, rows, d_in).t(), dzg, 1.0, gw, h, 1);
        if steps > 1 {
            let pairs = (steps - 1) * batch;
            let (h_prev, dz_cur) = if cache.reverse {
                (&cache.h[bh..], &dz[gcol..])
            } else {
                (&cache.h[..pairs * h], &dz[batch * g4 + gcol..])
            };
            gemm(
                View::rm(h_prev, pairs, h).t(),
                View::strided(dz_cur, pairs, h, g4, 1),
                1.0,
                gu,
                h,
                1,
            );
        }
        for row in dz.chunks_exact(g4) {
            for (b, d) in gb.iter_mut().zip(&row[gcol..gcol + h]) {
                *b += d;
            }
        }
        gemm(dzg, View::rm(cell.w(g), d_in, h).t(), 1.0, dx, d_in, 1);
    }
}

/// Bidirectional layer output.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerOutput {
    /// `T × 2d_h`, row `t` is `[h_fwd(t) ; h_bwd(t)]`.
    Sequence(Vec<f64>),
    /// `[h_fwd after step T−1 ; h_bwd after consuming step 0]`.
    Last(Vec<f64>),
}

/// Runs a bidirectional LSTM layer over one sequence (`T × d_in`, row-major).
pub fn bilstm_layer(
    seq: &[f64],
    fwd: CellRef<'_>,
    bwd: CellRef<'_>,
    return_sequences: bool,
) -> Result<LayerOutput, ModelError> {
    if fwd.d_in != bwd.d_in || fwd.d_h != bwd.d_h {
        return Err(ModelError::ShapeMismatch(
            "forward and backward cells differ in shape".into(),
        ));
    }
    let d_in = fwd.d_in;
    if seq.is_empty() || seq.len() % d_in != 0 {
        return Err(ModelError::ShapeMismatch(format!(
            "sequence length {} is not a positive multiple of {d_in}",
            seq.len()
        )));
    }
    let steps = seq.len() / d_in;
    let h = fwd.d_h;
    let f = dir_forward(seq, steps, 1, fwd, false);
    let b = dir_forward(seq, steps, 1, bwd, true);
    if return_sequences {
        let mut out = Vec::with_capacity(steps * 2 * h);
        for t in 0..steps {
            out.extend_from_slice(&f.h[t * h..(t + 1) * h]);
            out.extend_from_slice(&b.h[t * h..(t + 1) * h]);
        }
        Ok(LayerOutput::Sequence(out))
    } else {
        let mut out = f.final_h().to_vec();
        out.extend_from_slice(b.final_h());
        Ok(LayerOutput::Last(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::LstmCellParams;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let p = LstmCellParams::zeros(3, 2);
        let (h, c) = lstm_cell_step(&[0.0; 3], &[0.0; 2], &[0.0; 2], p.view()).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmCellParams::zeros(2, 2);
        p.b_mut(Gate::Forget).iter_mut().for_each(|b| *b = 100.0);
        let c0 = [0.7, -1.3];
        let (_, c) = lstm_cell_step(&[0.0; 2], &[0.0; 2], &c0, p.view()).unwrap();
        assert!((c[0] - 0.7).abs() < 1e-12);
        assert!((c[1] + 1.3).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_small_cell() {
        // d_in = d_h = 2, values chosen by hand; expected values evaluated
        // independently with the five gate equations written out per unit.
        let mut p = LstmCellParams::zeros(2, 2);
        for (k, v) in p.values.iter_mut().enumerate() {
            *v = ((k as f64) * 0.37).sin() * 0.5;
        }
        let x = [0.3, -0.8];
        let h = [0.1, 0.4];
        let c = [-0.2, 0.5];
        let v = p.values.clone();
        // Gate block length = 2*2 + 2*2 + 2 = 10.
        let pre = |g: usize, j: usize| {
            let base = g * 10;
            v[base + 8 + j]
                + x[0] * v[base + j]
                + x[1] * v[base + 2 + j]
                + h[0] * v[base + 4 + j]
                + h[1] * v[base + 6 + j]
        };
        let (h_new, c_new) = lstm_cell_step(&x, &h, &c, p.view()).unwrap();
        for j in 0..2 {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sig(pre(3, j));
            let cj = f * c[j] + i * g;
            assert!((c_new[j] - cj).abs() < 1e-14);
            assert!((h_new[j] - o * cj.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let p = LstmCellParams::zeros(3, 2);
        assert!(matches!(
            lstm_cell_step(&[0.0; 2], &[0.0; 2], &[0.0; 2], p.view()),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    fn unrolled(seq: &[f64], d_in: usize, p: CellRef<'_>, reverse: bool) -> Vec<Vec<f64>> {
        let steps = seq.len() / d_in;
        let mut out = vec![vec![]; steps];
        let mut h = vec![0.0; p.d_h];
        let mut c = vec![0.0; p.d_h];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let (h2, c2) = lstm_cell_step(&seq[t * d_in..(t + 1) * d_in], &h, &c, p).unwrap();
            h = h2;
            c = c2;
            out[t] = h.clone();
        }
        out
    }

    #[test]
    fn bilstm_matches_unrolled_cell_steps() {
        let fwd = LstmCellParams::random(2, 2, 0.8, 1);
        let bwd = LstmCellParams::random(2, 2, 0.8, 2);
        let seq = [0.5, -0.1, 0.9, 0.3, -0.7, 0.2];
        let f = unrolled(&seq, 2, fwd.view(), false);
        let b = unrolled(&seq, 2, bwd.view(), true);
        let LayerOutput::Sequence(out) = bilstm_layer(&seq, fwd.view(), bwd.view(), true).unwrap()
        else {
            panic!("expected sequence output")
        };
        for t in 0..3 {
            for j in 0..2 {
                assert!((out[t * 4 + j] - f[t][j]).abs() < 1e-14);
                assert!((out[t * 4 + 2 + j] - b[t][j]).abs() < 1e-14);
            }
        }
        let LayerOutput::Last(last) = bilstm_layer(&seq, fwd.view(), bwd.view(), false).unwrap()
        else {
            panic!("expected last output")
        };
        assert_eq!(last.len(), 4);
        for j in 0..2 {
            assert!((last[j] - f[2][j]).abs() < 1e-14);
            assert!((last[2 + j] - b[0][j]).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_both_directions_see_same_input() {
        let p = LstmCellParams::random(3, 2, 0.5, 9);
        let LayerOutput::Sequence(out) =
            bilstm_layer(&[0.1, 0.2, 0.3], p.view(), p.view(), true).unwrap()
        else {
            panic!()
        };
        assert_eq!(out[0..2], out[2..4]);
    }

    #[test]
    fn palindrome_with_shared_params_mirrors() {
        let p = LstmCellParams::random(2, 3, 0.6, 4);
        let seq = [0.1, 0.2, -0.5, 0.4, 0.9, -0.3, -0.5, 0.4, 0.1, 0.2];
        let LayerOutput::Sequence(out) = bilstm_layer(&seq, p.view(), p.view(), true).unwrap()
        else {
            panic!()
        };
        let steps = 5;
        for t in 0..steps {
            let fwd = &out[t * 6..t * 6 + 3];
            let bwd = &out[(steps - 1 - t) * 6 + 3..(steps - 1 - t) * 6 + 6];
            for (a, b) in fwd.iter().zip(bwd) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
