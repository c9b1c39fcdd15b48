use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape descriptor of the stacked BiLSTM classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    /// Time steps per sequence.
    pub seq_len: usize,
    /// Features per time step (embedding dimension).
    pub input_dim: usize,
    /// Memory units per direction in each BiLSTM layer.
    pub hidden: usize,
    /// Number of stacked BiLSTM layers.
    pub lstm_layers: usize,
    /// Width of the ReLU dense layer.
    pub dense: usize,
}

impl Architecture {
    /// 200 steps of 100 features, three BiLSTM layers of 100 units, dense 200.
    pub const fn full() -> Self {
        Self {
            seq_len: 200,
            input_dim: 100,
            hidden: 100,
            lstm_layers: 3,
            dense: 200,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.seq_len == 0
            || self.input_dim == 0
            || self.hidden == 0
            || self.lstm_layers == 0
            || self.dense == 0
        {
            return Err(ModelError::InvalidArchitecture(*self));
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * self.hidden
        }
    }

    /// Offset of the cell for `(layer, direction)` in the canonical flat layout.
    pub(crate) fn cell_offset(&self, layer: usize, dir: Direction) -> usize {
        let mut off = 0;
        for l in 0..layer {
            off += 2 * cell_len(self.layer_input_dim(l), self.hidden);
        }
        if dir == Direction::Backward {
            off += cell_len(self.layer_input_dim(layer), self.hidden);
        }
        off
    }

    pub(crate) fn dense1_w_offset(&self) -> usize {
        self.cell_offset(self.lstm_layers, Direction::Forward)
    }

    pub(crate) fn dense1_b_offset(&self) -> usize {
        self.dense1_w_offset() + 2 * self.hidden * self.dense
    }

    pub(crate) fn out_w_offset(&self) -> usize {
        self.dense1_b_offset() + self.dense
    }

    pub(crate) fn out_b_offset(&self) -> usize {
        self.out_w_offset() + self.dense
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.out_b_offset() + 1
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// LSTM gates in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];
}

/// Scalars per gate block: W (d_in × d_h), U (d_h × d_h), b (d_h).
pub(crate) const fn gate_len(d_in: usize, d_h: usize) -> usize {
    d_in * d_h + d_h * d_h + d_h
}

pub(crate) const fn cell_len(d_in: usize, d_h: usize) -> usize {
    4 * gate_len(d_in, d_h)
}

/// Borrowed view of one LSTM cell's parameters in canonical layout:
/// for each gate (input, forget, candidate, output): W row-major, U row-major, b.
#[derive(Debug, Clone, Copy)]
pub struct CellRef<'a> {
    pub d_in: usize,
    pub d_h: usize,
    values: &'a [f64],
}

impl<'a> CellRef<'a> {
    pub fn new(d_in: usize, d_h: usize, values: &'a [f64]) -> Result<Self, ModelError> {
        let expected = cell_len(d_in, d_h);
        if values.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { d_in, d_h, values })
    }

    fn gate_base(&self, g: Gate) -> usize {
        g as usize * gate_len(self.d_in, self.d_h)
    }

    /// Input weights, `d_in × d_h` row-major.
    pub fn w(&self, g: Gate) -> &'a [f64] {
        let s = self.gate_base(g);
        &self.values[s..s + self.d_in * self.d_h]
    }

    /// Recurrent weights, `d_h × d_h` row-major.
    pub fn u(&self, g: Gate) -> &'a [f64] {
        let s = self.gate_base(g) + self.d_in * self.d_h;
        &self.values[s..s + self.d_h * self.d_h]
    }

    pub fn b(&self, g: Gate) -> &'a [f64] {
        let s = self.gate_base(g) + self.d_in * self.d_h + self.d_h * self.d_h;
        &self.values[s..s + self.d_h]
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }
}

/// Owned parameters of a single LSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub d_in: usize,
    pub d_h: usize,
    pub values: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            d_in,
            d_h,
            values: vec![0.0; cell_len(d_in, d_h)],
        }
    }

    /// Uniform random entries in `[-scale, scale]`.
    pub fn random(d_in: usize, d_h: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            d_in,
            d_h,
            values: (0..cell_len(d_in, d_h))
                .map(|_| rng.gen_range(-scale..=scale))
                .collect(),
        }
    }

    pub fn view(&self) -> CellRef<'_> {
        CellRef {
            d_in: self.d_in,
            d_h: self.d_h,
            values: &self.values,
        }
    }

    pub fn b_mut(&mut self, g: Gate) -> &mut [f64] {
        let s = g as usize * gate_len(self.d_in, self.d_h)
            + self.d_in * self.d_h
            + self.d_h * self.d_h;
        let d_h = self.d_h;
        &mut self.values[s..s + d_h]
    }
}

/// Flat parameter vector in canonical order; the unit of FedAvg arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// All trainable tensors of the classifier.
///
/// Canonical order: BiLSTM layers first (layer-major, forward direction before
/// backward, gates input/forget/candidate/output, W before U before b), then the
/// dense layer weights (`2·hidden × dense`, row-major) and bias, then the output
/// weights (`dense`) and the scalar output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn cell(&self, layer: usize, dir: Direction) -> CellRef<'_> {
        let d_in = self.arch.layer_input_dim(layer);
        let off = self.arch.cell_offset(layer, dir);
        CellRef {
            d_in,
            d_h: self.arch.hidden,
            values: &self.values[off..off + cell_len(d_in, self.arch.hidden)],
        }
    }

    /// Mutable slice of one cell's canonical block.
    pub fn cell_values_mut(&mut self, layer: usize, dir: Direction) -> &mut [f64] {
        let d_in = self.arch.layer_input_dim(layer);
        let off = self.arch.cell_offset(layer, dir);
        &mut self.values[off..off + cell_len(d_in, self.arch.hidden)]
    }

    pub fn dense1_w(&self) -> &[f64] {
        let o = self.arch.dense1_w_offset();
        &self.values[o..o + 2 * self.arch.hidden * self.arch.dense]
    }

    pub fn dense1_b(&self) -> &[f64] {
        let o = self.arch.dense1_b_offset();
        &self.values[o..o + self.arch.dense]
    }

    pub fn out_w(&self) -> &[f64] {
        let o = self.arch.out_w_offset();
        &self.values[o..o + self.arch.dense]
    }

    pub fn out_b(&self) -> f64 {
        self.values[self.arch.out_b_offset()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn flatten(&self) -> ParamVector {
        ParamVector(self.values.clone())
    }

    pub fn unflatten(arch: Architecture, vec: ParamVector) -> Result<Self, ModelError> {
        let expected = arch.param_count();
        if vec.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                actual: vec.len(),
            });
        }
        Ok(Self { arch, values: vec.0 })
    }

    pub fn into_vector(self) -> ParamVector {
        ParamVector(self.values)
    }
}

/// Glorot-uniform weights, zero biases except forget-gate biases at 1.0.
pub fn init_params(arch: Architecture, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(arch);
    let h = arch.hidden;
    let fill = |slice: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in slice.iter_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
    };
    for layer in 0..arch.lstm_layers {
        let d_in = arch.layer_input_dim(layer);
        for dir in [Direction::Forward, Direction::Backward] {
            let cell = p.cell_values_mut(layer, dir);
            let glen = gate_len(d_in, h);
            for g in Gate::ALL {
                let base = g as usize * glen;
                fill(&mut cell[base..base + d_in * h], d_in, h, &mut rng);
                let u0 = base + d_in * h;
                fill(&mut cell[u0..u0 + h * h], h, h, &mut rng);
                let b0 = u0 + h * h;
                let bias = if g == Gate::Forget { 1.0 } else { 0.0 };
                cell[b0..b0 + h].iter_mut().for_each(|b| *b = bias);
            }
        }
    }
    let o = arch.dense1_w_offset();
    fill(
        &mut p.values[o..o + 2 * h * arch.dense],
        2 * h,
        arch.dense,
        &mut rng,
    );
    let o = arch.out_w_offset();
    fill(&mut p.values[o..o + arch.dense], arch.dense, 1, &mut rng);
    p
}
