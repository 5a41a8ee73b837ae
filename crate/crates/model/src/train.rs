//! Teacher-forced training with AdamW and the inverse-square-root schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use hyspa_core::data::Example;
use hyspa_core::{canonicalize, encode, CodecError};
use hyspa_tensor::{inv_sqrt_lr, AdamW, AdamWConfig, Gradients, Graph, ParamStore, ShapeMismatch};

use crate::model::{Dropout, Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("example {index}: {source}")]
    Encode { index: usize, source: CodecError },
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
    #[error("non-finite loss or gradient at step {0}")]
    NonFinite(u64),
    #[error("no training examples")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Sentences per step.
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: u64,
    pub label_smoothing: f64,
    /// Global gradient-norm bound.
    pub clip: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 12_000, batch_size: 16, lr: 1e-3, warmup: 500, label_smoothing: 0.1, clip: 0.25, weight_decay: 0.01, seed: 0 }
    }
}

/// A sentence as token ids with its canonical target sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub token_ids: Vec<usize>,
    pub items: Vec<usize>,
}

/// Encode examples with the model's vocabularies and canonical order.
pub fn instances(model: &Model, examples: &[Example]) -> Result<Vec<Instance>, TrainError> {
    examples
        .iter()
        .enumerate()
        .map(|(index, ex)| {
            let og = canonicalize(&ex.graph, &model.types, &model.edge_freq);
            let seq = encode(&og, &model.types, model.cfg.traversal).map_err(|source| TrainError::Encode { index, source })?;
            Ok(Instance { token_ids: model.tokens.ids(&ex.tokens), items: seq.items })
        })
        .collect()
}

/// Summed loss, target-token count and summed gradients over `batch`,
/// evaluated at `params`. Examples are processed in parallel and merged in
/// order, so results do not depend on the thread count.
pub fn batch_gradients(
    model: &Model,
    params: &ParamStore,
    batch: &[&Instance],
    eps: f64,
    dropout: Option<(f64, u64)>,
) -> Result<(f64, usize, Gradients), TrainError> {
    let parts: Vec<Result<(f64, usize, Gradients), ModelError>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut g = Graph::new(params);
            let mut rng = dropout.map(|(_, seed)| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64);
                r
            });
            let mut d = match (&mut rng, dropout) {
                (Some(rng), Some((rate, _))) => Some(Dropout { rate, rng }),
                _ => None,
            };
            let loss = model.sequence_loss(&mut g, &inst.token_ids, &inst.items, eps, d.as_mut())?;
            Ok((g.scalar(loss), inst.items.len() + 1, g.backward(loss)))
        })
        .collect();
    let mut total = Gradients::new(params.len());
    let (mut loss, mut tokens) = (0.0, 0);
    for p in parts {
        let (l, t, g) = p?;
        loss += l;
        tokens += t;
        total.merge(&g);
    }
    Ok((loss, tokens, total))
}

/// Mean per-token loss of `batch` at `params`, without dropout.
pub fn batch_loss(model: &Model, params: &ParamStore, batch: &[&Instance], eps: f64) -> Result<f64, TrainError> {
    let mut loss = 0.0;
    let mut tokens = 0;
    for inst in batch {
        let mut g = Graph::new(params);
        let l = model.sequence_loss(&mut g, &inst.token_ids, &inst.items, eps, None)?;
        loss += g.scalar(l);
        tokens += inst.items.len() + 1;
    }
    Ok(loss / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub step: u64,
    /// Mean per-token loss.
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(model: &Model, cfg: TrainConfig) -> Self {
        let opt = AdamW::new(&model.params, AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() });
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self { cfg, opt, rng, order: Vec::new(), cursor: 0 }
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }

    /// Indices of the next batch; the data is reshuffled every epoch.
    pub fn next_batch(&mut self, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        while out.len() < self.cfg.batch_size.min(len) {
            if self.cursor >= self.order.len() {
                self.order = (0..len).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, model: &mut Model, batch: &[&Instance]) -> Result<StepStats, TrainError> {
        let step = self.opt.step + 1;
        let dropout = (model.cfg.dropout > 0.0).then(|| (model.cfg.dropout, self.cfg.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let (loss, tokens, mut grads) = batch_gradients(model, &model.params, batch, self.cfg.label_smoothing, dropout)?;
        grads.scale(1.0 / tokens as f64);
        let loss = loss / tokens as f64;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(TrainError::NonFinite(step));
        }
        let grad_norm = grads.clip_global_norm(self.cfg.clip);
        let lr = inv_sqrt_lr(step, self.cfg.lr, self.cfg.warmup);
        self.opt.step(&mut model.params, &grads, lr)?;
        Ok(StepStats { step, loss, grad_norm, lr })
    }

    /// Train for the configured number of steps, calling `log` after each.
    pub fn run(&mut self, model: &mut Model, data: &[Instance], mut log: impl FnMut(&StepStats, &Model)) -> Result<(), TrainError> {
        if data.is_empty() {
            return Err(TrainError::Empty);
        }
        while self.opt.step < self.cfg.steps {
            let idx = self.next_batch(data.len());
            let batch: Vec<&Instance> = idx.iter().map(|&i| &data[i]).collect();
            let stats = self.train_step(model, &batch)?;
            log(&stats, model);
        }
        Ok(())
    }
}
