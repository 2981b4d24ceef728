use rand::seq::SliceRandom;

use super::{CnnModel, Engine, HeadKind, NnetError, NUM_PARAMS};
use crate::config::KvConfig;
use crate::datagen::{Dataset, DatasetKind};
use crate::rng::derived_stream;
use crate::terrain::CELLS;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.005, momentum: 0.9, batch_size: 8, epochs: 60, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnetError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnetError::InvalidConfig("learning_rate must be a non-negative number".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnetError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(NnetError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Read `train.*`, falling back to the defaults.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self, NnetError> {
        let d = Self::default();
        let bad = |e: crate::config::ConfigError| NnetError::InvalidConfig(e.to_string());
        let c = Self {
            learning_rate: cfg.get_or("train.learning_rate", d.learning_rate).map_err(bad)?,
            momentum: cfg.get_or("train.momentum", d.momentum).map_err(bad)?,
            batch_size: cfg.get_or("train.batch_size", d.batch_size).map_err(bad)?,
            epochs: cfg.get_or("train.epochs", d.epochs).map_err(bad)?,
            seed: cfg.get_or("train.seed", d.seed).map_err(bad)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn write_kv(&self, cfg: &mut KvConfig) {
        cfg.set("train.learning_rate", self.learning_rate);
        cfg.set("train.momentum", self.momentum);
        cfg.set("train.batch_size", self.batch_size);
        cfg.set("train.epochs", self.epochs);
        cfg.set("train.seed", self.seed);
    }
}

/// Per-epoch mean squared errors. Training error is measured on each batch
/// before its update; test error after the epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,test_mse\n");
        for (i, tr) in self.train.iter().enumerate() {
            let te = self.test.get(i).map_or(String::new(), |v| v.to_string());
            s.push_str(&format!("{},{tr},{te}\n", i + 1));
        }
        s
    }
}

fn expected_head(kind: DatasetKind) -> HeadKind {
    match kind {
        DatasetKind::Viability => HeadKind::Sigmoid,
        DatasetKind::Cot => HeadKind::Linear,
    }
}

/// Minibatch SGD with momentum on the dataset's training split.
pub fn train(model: &CnnModel, ds: &Dataset, cfg: &TrainConfig) -> Result<(CnnModel, LossHistory), NnetError> {
    cfg.validate()?;
    let expected = expected_head(ds.kind);
    if model.head_kind != expected {
        return Err(NnetError::HeadKindMismatch { expected, found: model.head_kind });
    }
    let mut model = model.clone();
    let mut velocity = vec![0.0; NUM_PARAMS];
    let mut grad = vec![0.0; NUM_PARAMS];
    let mut engine = Engine::new(cfg.batch_size);
    let mut history = LossHistory::default();

    let mut order = ds.train.clone();
    let mut batch_x = vec![0.0; cfg.batch_size * CELLS];
    let mut batch_y = vec![0.0; cfg.batch_size];
    let mut sq = vec![0.0; cfg.batch_size];
    let mut per_sample = vec![0.0; ds.samples.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derived_stream(cfg.seed, &[epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            for (slot, &idx) in chunk.iter().enumerate() {
                let s = &ds.samples[idx];
                batch_x[slot * CELLS..(slot + 1) * CELLS].copy_from_slice(&s.heightfield.values);
                batch_y[slot] = s.label;
            }
            engine.loss_and_grad(&model, &batch_x[..n * CELLS], &batch_y[..n], &mut grad, &mut sq[..n]);
            for (slot, &idx) in chunk.iter().enumerate() {
                per_sample[idx] = sq[slot];
            }
            for ((w, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *w += *v;
            }
        }
        if !ds.train.is_empty() {
            let total: f64 = ds.train.iter().map(|&i| per_sample[i]).sum();
            history.train.push(total / ds.train.len() as f64);
        }
        if !ds.test.is_empty() {
            history.test.push(mse(&mut engine, &model, ds, &ds.test, cfg.batch_size));
        }
    }
    Ok((model, history))
}

/// Mean squared error of `model` over the given sample indices.
pub(crate) fn mse(engine: &mut Engine, model: &CnnModel, ds: &Dataset, indices: &[usize], batch: usize) -> f64 {
    let mut x = vec![0.0; batch * CELLS];
    let mut total = 0.0;
    for chunk in indices.chunks(batch) {
        for (slot, &idx) in chunk.iter().enumerate() {
            x[slot * CELLS..(slot + 1) * CELLS].copy_from_slice(&ds.samples[idx].heightfield.values);
        }
        let out = engine.forward(model, &x[..chunk.len() * CELLS], chunk.len());
        for (&idx, &p) in chunk.iter().zip(out) {
            let e = p - ds.samples[idx].label;
            total += e * e;
        }
    }
    total / indices.len() as f64
}
