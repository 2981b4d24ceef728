//! Small CNN regressors over heightfields, written from scratch.
//!
//! Architecture: 3x3 conv (4) -> ReLU -> 3x3 conv (8) -> ReLU -> 2x2 max-pool
//! -> 3x3 conv (8) -> ReLU -> flatten (600) -> fc 128 -> ReLU -> fc 128 -> ReLU
//! -> scalar head, with a sigmoid for viability models.

pub mod gradcheck;
mod io;
pub(crate) mod layers;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::rng::stream;
use crate::terrain::{Heightfield, CELLS, COLS, ROWS};
use layers::{
    col2im, conv_backward, conv_forward, fc_backward, fc_forward, im2col, maxpool_backward, maxpool_forward, relu,
    relu_backward, ConvDims,
};

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use train::{train, LossHistory, TrainConfig};

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("input has {found} values, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("heightfield still has occluded cells")]
    UnfilledInput,
    #[error("empty batch")]
    EmptyBatch,
    #[error("head kind mismatch: expected {expected}, found {found}")]
    HeadKindMismatch { expected: HeadKind, found: HeadKind },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed model file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("model format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Viability head, output in (0, 1).
    Sigmoid,
    /// Cost-of-transport head, unbounded during training.
    Linear,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Sigmoid => "sigmoid",
            HeadKind::Linear => "linear",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sigmoid" | "viability" => Ok(HeadKind::Sigmoid),
            "linear" | "cot" => Ok(HeadKind::Linear),
            other => Err(format!("unknown head kind `{other}`")),
        }
    }
}

pub(crate) const C1: usize = 4;
pub(crate) const C2: usize = 8;
pub(crate) const C3: usize = 8;
pub(crate) const PH: usize = ROWS / 2;
pub(crate) const PW: usize = COLS / 2;
pub const FLAT: usize = C3 * PH * PW;
pub const HIDDEN: usize = 128;

/// One parameter tensor in file and memory order.
#[derive(Debug, Clone, Copy)]
pub struct TensorInfo {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    /// Inputs feeding each output unit; zero marks a bias.
    pub fan_in: usize,
}

const fn tensor_table() -> [TensorInfo; 12] {
    let spec: [(&str, usize, usize); 12] = [
        ("conv1.weight", C1 * 9, 9),
        ("conv1.bias", C1, 0),
        ("conv2.weight", C2 * C1 * 9, C1 * 9),
        ("conv2.bias", C2, 0),
        ("conv3.weight", C3 * C2 * 9, C2 * 9),
        ("conv3.bias", C3, 0),
        ("fc1.weight", HIDDEN * FLAT, FLAT),
        ("fc1.bias", HIDDEN, 0),
        ("fc2.weight", HIDDEN * HIDDEN, HIDDEN),
        ("fc2.bias", HIDDEN, 0),
        ("head.weight", HIDDEN, HIDDEN),
        ("head.bias", 1, 0),
    ];
    let mut out = [TensorInfo { name: "", offset: 0, len: 0, fan_in: 0 }; 12];
    let mut i = 0;
    let mut offset = 0;
    while i < 12 {
        out[i] = TensorInfo { name: spec[i].0, offset, len: spec[i].1, fan_in: spec[i].2 };
        offset += spec[i].1;
        i += 1;
    }
    out
}

pub const TENSORS: [TensorInfo; 12] = tensor_table();
pub const NUM_PARAMS: usize = TENSORS[11].offset + TENSORS[11].len;

/// All weights of one regressor, stored flat in [`TENSORS`] order. Gradients
/// use the same type and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub head_kind: HeadKind,
    pub params: Vec<f64>,
}

impl CnnModel {
    pub fn zeros(head_kind: HeadKind) -> Self {
        Self { head_kind, params: vec![0.0; NUM_PARAMS] }
    }

    pub fn tensor(&self, index: usize) -> &[f64] {
        let t = TENSORS[index];
        &self.params[t.offset..t.offset + t.len]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
        let t = TENSORS[index];
        &mut self.params[t.offset..t.offset + t.len]
    }

    /// Raw network output for one filled, normalized heightfield.
    pub fn forward(&self, hf: &Heightfield) -> Result<f64, NnetError> {
        if hf.occluded_count() > 0 {
            return Err(NnetError::UnfilledInput);
        }
        self.forward_values(&hf.values)
    }

    pub fn forward_values(&self, values: &[f64]) -> Result<f64, NnetError> {
        if values.len() != CELLS {
            return Err(NnetError::ShapeMismatch { expected: CELLS, found: values.len() });
        }
        let mut engine = Engine::new(1);
        Ok(engine.forward(self, values, 1)[0])
    }

    /// Forward pass clamped to the head's valid range.
    pub fn predict(&self, hf: &Heightfield) -> Result<f64, NnetError> {
        let y = self.forward(hf)?;
        Ok(match self.head_kind {
            HeadKind::Sigmoid => y,
            HeadKind::Linear => y.max(0.0),
        })
    }

    /// [`predict`](Self::predict) over many heightfields, evaluated in batches.
    pub fn predict_batch(&self, hfs: &[&Heightfield]) -> Result<Vec<f64>, NnetError> {
        if hfs.iter().any(|hf| hf.occluded_count() > 0) {
            return Err(NnetError::UnfilledInput);
        }
        let mut engine = Engine::new(hfs.len().min(PREDICT_BATCH));
        let mut out = Vec::with_capacity(hfs.len());
        let mut x = Vec::with_capacity(PREDICT_BATCH * CELLS);
        for chunk in hfs.chunks(PREDICT_BATCH) {
            x.clear();
            for hf in chunk {
                x.extend_from_slice(&hf.values);
            }
            let y = engine.forward(self, &x, chunk.len());
            out.extend(y.iter().map(|&v| match self.head_kind {
                HeadKind::Sigmoid => v,
                HeadKind::Linear => v.max(0.0),
            }));
        }
        Ok(out)
    }
}

const PREDICT_BATCH: usize = 128;

/// Uniform `[-sqrt(1/fan_in), sqrt(1/fan_in)]` weights, zero biases.
pub fn init_model(head_kind: HeadKind, seed: u64) -> CnnModel {
    let mut rng = stream(seed);
    let mut model = CnnModel::zeros(head_kind);
    for (i, t) in TENSORS.iter().enumerate() {
        if t.fan_in == 0 {
            continue;
        }
        let bound = (1.0 / t.fan_in as f64).sqrt();
        for w in model.tensor_mut(i) {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    model
}

/// Mean squared error over the batch and its exact gradient.
pub fn loss_and_grad(model: &CnnModel, inputs: &[&[f64]], labels: &[f64]) -> Result<(f64, CnnModel), NnetError> {
    if inputs.is_empty() {
        return Err(NnetError::EmptyBatch);
    }
    if labels.len() != inputs.len() {
        return Err(NnetError::ShapeMismatch { expected: inputs.len(), found: labels.len() });
    }
    let mut flat = Vec::with_capacity(inputs.len() * CELLS);
    for x in inputs {
        if x.len() != CELLS {
            return Err(NnetError::ShapeMismatch { expected: CELLS, found: x.len() });
        }
        flat.extend_from_slice(x);
    }
    let mut engine = Engine::new(inputs.len());
    let mut grad = CnnModel::zeros(model.head_kind);
    let mut sq = vec![0.0; inputs.len()];
    let loss = engine.loss_and_grad(model, &flat, labels, &mut grad.params, &mut sq);
    Ok((loss, grad))
}

/// Scratch buffers for batched passes of up to `capacity` inputs.
pub(crate) struct Engine {
    capacity: usize,
    n: usize,
    x0: Vec<f64>,
    cols1: Vec<f64>,
    a1: Vec<f64>,
    cols2: Vec<f64>,
    a2: Vec<f64>,
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    cols3: Vec<f64>,
    a3: Vec<f64>,
    flat: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
    /// When set, ReLU gates and pooling winners are taken from this pattern
    /// instead of the current activations.
    frozen: Option<Pattern>,
    // backward
    d_flat: Vec<f64>,
    d_h1: Vec<f64>,
    d_h2: Vec<f64>,
    d_out: Vec<f64>,
    d_a3: Vec<f64>,
    d_cols3: Vec<f64>,
    d_pooled: Vec<f64>,
    d_a2: Vec<f64>,
    d_cols2: Vec<f64>,
    d_a1: Vec<f64>,
}

const FULL: usize = ROWS * COLS;
const HALF: usize = PH * PW;

impl Engine {
    pub fn new(capacity: usize) -> Self {
        let b = capacity.max(1);
        Self {
            capacity: b,
            n: 0,
            x0: vec![0.0; b * FULL],
            cols1: vec![0.0; 9 * b * FULL],
            a1: vec![0.0; C1 * b * FULL],
            cols2: vec![0.0; C1 * 9 * b * FULL],
            a2: vec![0.0; C2 * b * FULL],
            pooled: vec![0.0; C2 * b * HALF],
            argmax: vec![0; C2 * b * HALF],
            cols3: vec![0.0; C2 * 9 * b * HALF],
            a3: vec![0.0; C3 * b * HALF],
            flat: vec![0.0; b * FLAT],
            h1: vec![0.0; b * HIDDEN],
            h2: vec![0.0; b * HIDDEN],
            out: vec![0.0; b],
            frozen: None,
            d_flat: vec![0.0; b * FLAT],
            d_h1: vec![0.0; b * HIDDEN],
            d_h2: vec![0.0; b * HIDDEN],
            d_out: vec![0.0; b],
            d_a3: vec![0.0; C3 * b * HALF],
            d_cols3: vec![0.0; C2 * 9 * b * HALF],
            d_pooled: vec![0.0; C2 * b * HALF],
            d_a2: vec![0.0; C2 * b * FULL],
            d_cols2: vec![0.0; C1 * 9 * b * FULL],
            d_a1: vec![0.0; C1 * b * FULL],
        }
    }

    fn dims(&self, cin: usize, cout: usize, full: bool) -> ConvDims {
        let (h, w) = if full { (ROWS, COLS) } else { (PH, PW) };
        ConvDims { cin, cout, batch: self.n, h, w }
    }

    /// Outputs for `n` inputs laid out back to back in `x`.
    pub fn forward(&mut self, model: &CnnModel, x: &[f64], n: usize) -> &[f64] {
        assert!(n >= 1 && n <= self.capacity && x.len() == n * FULL);
        self.n = n;
        let p = &model.params;
        let t = |i: usize| &p[TENSORS[i].offset..TENSORS[i].offset + TENSORS[i].len];

        self.x0[..n * FULL].copy_from_slice(x);
        let d1 = self.dims(1, C1, true);
        im2col(&self.x0, d1, &mut self.cols1);
        conv_forward(&self.cols1, d1, t(0), t(1), &mut self.a1);
        let m = gate_sizes(n);
        gate(&mut self.a1[..m[0]], self.frozen.as_ref().map(|p| &p.on[..m[0]]));

        let d2 = self.dims(C1, C2, true);
        im2col(&self.a1, d2, &mut self.cols2);
        conv_forward(&self.cols2, d2, t(2), t(3), &mut self.a2);
        gate(&mut self.a2[..m[1]], self.frozen.as_ref().map(|p| &p.on[m[0]..m[0] + m[1]]));

        match &self.frozen {
            Some(p) => {
                self.argmax[..C2 * n * HALF].copy_from_slice(&p.argmax);
                for (o, &i) in self.pooled[..C2 * n * HALF].iter_mut().zip(&p.argmax) {
                    *o = self.a2[i];
                }
            }
            None => maxpool_forward(&self.a2, C2 * n, ROWS, COLS, &mut self.pooled, &mut self.argmax),
        }

        let d3 = self.dims(C2, C3, false);
        im2col(&self.pooled, d3, &mut self.cols3);
        conv_forward(&self.cols3, d3, t(4), t(5), &mut self.a3);
        let o = m[0] + m[1];
        gate(&mut self.a3[..m[2]], self.frozen.as_ref().map(|p| &p.on[o..o + m[2]]));

        // (c, b, y, x) -> (b, c*HALF + y*PW + x)
        for c in 0..C3 {
            for b in 0..n {
                let src = &self.a3[(c * n + b) * HALF..][..HALF];
                self.flat[b * FLAT + c * HALF..][..HALF].copy_from_slice(src);
            }
        }
        fc_forward(&self.flat, n, FLAT, t(6), t(7), HIDDEN, &mut self.h1);
        let o = o + m[2];
        gate(&mut self.h1[..m[3]], self.frozen.as_ref().map(|p| &p.on[o..o + m[3]]));
        fc_forward(&self.h1, n, HIDDEN, t(8), t(9), HIDDEN, &mut self.h2);
        let o = o + m[3];
        gate(&mut self.h2[..m[4]], self.frozen.as_ref().map(|p| &p.on[o..o + m[4]]));
        fc_forward(&self.h2, n, HIDDEN, t(10), t(11), 1, &mut self.out);
        if model.head_kind == HeadKind::Sigmoid {
            for v in &mut self.out[..n] {
                *v = crate::simkernel::logistic(*v);
            }
        }
        &self.out[..n]
    }

    /// Batch MSE; accumulates its gradient into `grad` (zeroed first) and
    /// writes each input's squared error to `sq`.
    pub fn loss_and_grad(&mut self, model: &CnnModel, x: &[f64], labels: &[f64], grad: &mut [f64], sq: &mut [f64]) -> f64 {
        let n = labels.len();
        self.forward(model, x, n);
        let mut loss = 0.0;
        for b in 0..n {
            let e = self.out[b] - labels[b];
            sq[b] = e * e;
            loss += e * e;
            let mut g = 2.0 * e / n as f64;
            if model.head_kind == HeadKind::Sigmoid {
                g *= self.out[b] * (1.0 - self.out[b]);
            }
            self.d_out[b] = g;
        }
        self.backward(model, grad);
        loss / n as f64
    }

    /// Backpropagate `d_out` through the last forward pass.
    fn backward(&mut self, model: &CnnModel, grad: &mut [f64]) {
        let n = self.n;
        grad.fill(0.0);
        let p = &model.params;
        let t = |i: usize| &p[TENSORS[i].offset..TENSORS[i].offset + TENSORS[i].len];
        let mut slices = split_tensors(grad);

        let [g_c1w, g_c1b, g_c2w, g_c2b, g_c3w, g_c3b, g_f1w, g_f1b, g_f2w, g_f2b, g_hw, g_hb] = &mut slices;
        fc_backward(&self.h2, &self.d_out, n, HIDDEN, 1, t(10), g_hw, g_hb, Some(&mut self.d_h2));
        relu_backward(&self.h2[..n * HIDDEN], &mut self.d_h2[..n * HIDDEN]);
        fc_backward(&self.h1, &self.d_h2, n, HIDDEN, HIDDEN, t(8), g_f2w, g_f2b, Some(&mut self.d_h1));
        relu_backward(&self.h1[..n * HIDDEN], &mut self.d_h1[..n * HIDDEN]);
        fc_backward(&self.flat, &self.d_h1, n, FLAT, HIDDEN, t(6), g_f1w, g_f1b, Some(&mut self.d_flat));

        for c in 0..C3 {
            for b in 0..n {
                let src = &self.d_flat[b * FLAT + c * HALF..][..HALF];
                self.d_a3[(c * n + b) * HALF..][..HALF].copy_from_slice(src);
            }
        }
        relu_backward(&self.a3[..C3 * n * HALF], &mut self.d_a3[..C3 * n * HALF]);
        let d3 = self.dims(C2, C3, false);
        conv_backward(&self.cols3, &self.d_a3, d3, t(4), g_c3w, g_c3b, Some(&mut self.d_cols3));
        col2im(&self.d_cols3, d3, &mut self.d_pooled);

        maxpool_backward(&self.d_pooled[..C2 * n * HALF], &self.argmax[..C2 * n * HALF], &mut self.d_a2[..C2 * n * FULL]);
        relu_backward(&self.a2[..C2 * n * FULL], &mut self.d_a2[..C2 * n * FULL]);
        let d2 = self.dims(C1, C2, true);
        conv_backward(&self.cols2, &self.d_a2, d2, t(2), g_c2w, g_c2b, Some(&mut self.d_cols2));
        col2im(&self.d_cols2, d2, &mut self.d_a1);

        relu_backward(&self.a1[..C1 * n * FULL], &mut self.d_a1[..C1 * n * FULL]);
        let d1 = self.dims(1, C1, true);
        conv_backward(&self.cols1, &self.d_a1, d1, t(0), g_c1w, g_c1b, None);
    }

    /// Which ReLUs fired and which pool inputs won in the last forward pass.
    pub fn activation_pattern(&self) -> Pattern {
        let n = self.n;
        let m = gate_sizes(n);
        let mut on = Vec::with_capacity(m.iter().sum());
        on.extend(self.a1[..m[0]].iter().map(|&v| v > 0.0));
        on.extend(self.a2[..m[1]].iter().map(|&v| v > 0.0));
        on.extend(self.a3[..m[2]].iter().map(|&v| v > 0.0));
        on.extend(self.h1[..m[3]].iter().map(|&v| v > 0.0));
        on.extend(self.h2[..m[4]].iter().map(|&v| v > 0.0));
        Pattern { on, argmax: self.argmax[..C2 * n * HALF].to_vec() }
    }

    /// Evaluate later passes on the linear piece selected by `pattern`.
    pub fn freeze(&mut self, pattern: Option<Pattern>) {
        self.frozen = pattern;
    }
}

/// Activation gates of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub on: Vec<bool>,
    pub argmax: Vec<usize>,
}

fn gate_sizes(n: usize) -> [usize; 5] {
    [C1 * n * FULL, C2 * n * FULL, C3 * n * HALF, n * HIDDEN, n * HIDDEN]
}

/// ReLU, or a fixed 0/1 gate when a mask is given.
fn gate(x: &mut [f64], mask: Option<&[bool]>) {
    match mask {
        None => relu(x),
        Some(m) => {
            for (v, &keep) in x.iter_mut().zip(m) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }
}

fn split_tensors(buf: &mut [f64]) -> [&mut [f64]; 12] {
    let mut rest = buf;
    let mut out: [&mut [f64]; 12] = Default::default();
    for (slot, t) in out.iter_mut().zip(TENSORS.iter()) {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(t.len);
        *slot = head;
        rest = tail;
    }
    out
}
