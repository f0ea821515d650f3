//! Backpropagation through time on final-step binary cross-entropy, plus the
//! bit-stream XOR task.

mod denormal;
mod optim;
mod xor;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use xor::{
    generate_xor, read_jsonl, to_series, write_jsonl, xor_splits, XorDatasetConfig, XorEncoding,
    XorEvent, XorFeatures, XorSequence,
};

use crate::autodiff::{Eval, Graph, Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::models::{Activation, Batch, CfcModel, IrregularSeries, ModelConfig, Variant};
use denormal::FlushDenormals;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub base_lr: f64,
    /// Multiplicative learning-rate factor per epoch.
    pub decay_lr: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clipnorm: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Parallel workers per batch; gradients are reduced in a fixed order.
    #[serde(default = "one")]
    pub workers: usize,
    /// Stop once the validation accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(invalid(format!(
                "base_lr must be > 0, got {}",
                self.base_lr
            )));
        }
        if !(self.decay_lr > 0.0 && self.decay_lr <= 1.0) {
            return Err(invalid(format!(
                "decay_lr must be in (0, 1], got {}",
                self.decay_lr
            )));
        }
        if !(self.clipnorm >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid("clipnorm and weight_decay must be >= 0"));
        }
        if self.batch_size == 0 || self.workers == 0 {
            return Err(invalid("batch_size and workers must be >= 1"));
        }
        Ok(())
    }

    /// `base_lr · decay_lr^epoch` (epochs counted from 0).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay_lr.powi(epoch as i32)
    }
}

/// Bit-stream XOR hyperparameters per variant.
pub fn xor_preset(variant: Variant, inputs: usize) -> (ModelConfig, TrainConfig) {
    let mut m = ModelConfig::new(variant, inputs, 64);
    let mut t = TrainConfig {
        optimizer: OptimizerKind::Rmsprop,
        base_lr: 0.005,
        decay_lr: 0.95,
        clipnorm: 10.0,
        weight_decay: 0.0,
        batch_size: 128,
        epochs: 200,
        seed: 0,
        workers: 1,
        target_accuracy: None,
    };
    let (hidden, units, act, dr, fb) = match variant {
        Variant::CfS => {
            t.optimizer = OptimizerKind::Adam;
            t.decay_lr = 0.9;
            t.clipnorm = 5.0;
            t.batch_size = 256;
            t.weight_decay = 3e-5;
            (64, 64, Activation::Silu, 0.0, 1.2)
        }
        Variant::Cfc => {
            t.clipnorm = 1.0;
            t.base_lr = 0.05;
            t.decay_lr = 0.7;
            t.weight_decay = 3e-6;
            (192, 128, Activation::Relu, 0.0, 1.2)
        }
        Variant::CfcNoGate => {
            t.weight_decay = 5e-6;
            (128, 192, Activation::Silu, 0.3, 4.7)
        }
        Variant::CfcMmrnn => {
            t.weight_decay = 2e-6;
            (64, 128, Activation::Relu, 0.0, 0.6)
        }
    };
    m.hidden = hidden;
    m.backbone.units = units;
    m.backbone.activation = act;
    m.backbone.dropout = dr;
    m.forget_bias = fb;
    (m, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub loss: f64,
    /// Running accuracy over the epoch's training batches.
    pub acc: f64,
    pub lr: f64,
    pub seconds: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best: BestRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
}

/// Result of one forward/backward pass over a batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    /// Mean BCE over the batch.
    pub loss: f64,
    /// Rows whose logit sign matches the label.
    pub correct: usize,
    pub grads: BTreeMap<String, Tensor>,
}

/// Mean loss over the batch and its gradient for every parameter.
pub fn batch_gradients(
    model: &CfcModel,
    batch: &Batch,
    rng: Option<&mut dyn RngCore>,
) -> Result<BatchGradients> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let logits = model.logits(&mut tape, &p, batch, rng)?;
    let correct = tape
        .value(&logits)
        .data()
        .iter()
        .zip(batch.labels.data())
        .filter(|(z, y)| (**z > 0.0) == (**y > 0.5))
        .count();
    let targets = tape.constant(batch.labels.clone());
    let loss = tape.bce_with_logits(&logits, &targets)?;
    let value = tape.value(&loss).item()?;
    let mut grads = tape.backward(loss)?;
    let grads = p.into_iter().map(|(k, v)| (k, grads.take(v))).collect();
    Ok(BatchGradients {
        loss: value,
        correct,
        grads,
    })
}

/// Splits `rows` into `workers` contiguous chunks and sums their
/// loss-weighted gradients in chunk order.
fn parallel_gradients(
    model: &CfcModel,
    rows: &[&IrregularSeries],
    workers: usize,
    seed: u64,
) -> Result<BatchGradients> {
    let policy = *model.time_policy();
    let dropout = model.config().backbone.dropout > 0.0 && model.variant().has_backbone();
    let run = |k: usize, chunk: &[&IrregularSeries]| -> Result<BatchGradients> {
        let _flush = FlushDenormals::new();
        let batch = Batch::new(chunk, &policy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9));
        let rng: Option<&mut dyn RngCore> = if dropout { Some(&mut rng) } else { None };
        batch_gradients(model, &batch, rng)
    };
    let chunk = rows.len().div_ceil(workers.min(rows.len()).max(1));
    let parts: Vec<&[&IrregularSeries]> = rows.chunks(chunk).collect();
    let results: Vec<Result<BatchGradients>> = if parts.len() == 1 {
        vec![run(0, parts[0])]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = parts
                .iter()
                .enumerate()
                .map(|(k, c)| s.spawn(move || run(k, c)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(invalid("training worker panicked")))
                })
                .collect()
        })
    };
    let total = rows.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut acc: Option<BTreeMap<String, Tensor>> = None;
    for (r, part) in results.into_iter().zip(&parts) {
        let BatchGradients {
            loss: l,
            correct: c,
            grads: g,
        } = r?;
        let w = part.len() as f64 / total;
        loss += w * l;
        correct += c;
        match &mut acc {
            None if parts.len() == 1 => acc = Some(g),
            None => {
                acc = Some(g.into_iter().map(|(k, t)| (k, t.map(|v| v * w))).collect());
            }
            Some(a) => {
                for (k, t) in g {
                    let dst = a.get_mut(&k).expect("same parameter set");
                    for (d, v) in dst.data_mut().iter_mut().zip(t.data()) {
                        *d += w * v;
                    }
                }
            }
        }
    }
    Ok(BatchGradients {
        loss,
        correct,
        grads: acc.unwrap_or_default(),
    })
}

/// Accuracy (logit > 0 predicts 1) and mean BCE.
pub fn evaluate(model: &CfcModel, data: &[IrregularSeries]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(invalid("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for chunk in data.chunks(512) {
        let refs: Vec<&IrregularSeries> = chunk.iter().collect();
        let logits = model.predict(&refs)?;
        let labels: Vec<f64> = chunk.iter().map(|s| s.label).collect();
        correct += logits
            .iter()
            .zip(&labels)
            .filter(|(z, y)| (**z > 0.0) == (**y > 0.5))
            .count();
        let mut g = Eval;
        let z = g.constant(Tensor::vector(logits));
        let y = g.constant(Tensor::vector(labels));
        loss += g.bce_with_logits(&z, &y)?.item()? * chunk.len() as f64;
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

/// Batches over the shuffled `order` with similar lengths grouped together,
/// so that padding stays small. Sorting happens inside windows of 16 batches
/// and the batch order is shuffled afterwards.
fn length_buckets(
    order: &[usize],
    data: &[IrregularSeries],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for window in order.chunks(batch_size * 16) {
        let mut w = window.to_vec();
        w.sort_by_key(|&i| data[i].len());
        batches.extend(w.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn better(a: &EvalReport, best: Option<&BestRecord>) -> bool {
    match best {
        None => true,
        Some(b) => a.accuracy > b.val_acc || (a.accuracy == b.val_acc && a.loss < b.val_loss),
    }
}

pub fn train(
    model: &mut CfcModel,
    train_set: &[IrregularSeries],
    val_set: &[IrregularSeries],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, train_set, val_set, cfg, &mut |_, _| {})
}

/// Trains in place and leaves `model` at its best validation checkpoint
/// (accuracy first, loss second). Calls `on_epoch` after every epoch.
pub fn train_with(
    model: &mut CfcModel,
    train_set: &[IrregularSeries],
    val_set: &[IrregularSeries],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid(
            "training needs non-empty train and validation sets",
        ));
    }
    if let Some(bad) = train_set
        .iter()
        .chain(val_set)
        .find(|s| !s.is_empty() && s.dims() != model.inputs())
    {
        return Err(invalid(format!(
            "model expects {} features, data has {}",
            model.inputs(),
            bad.dims()
        )));
    }
    let _flush = FlushDenormals::new();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestRecord> = None;
    let mut best_params = model.params().clone();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let batches = length_buckets(&order, train_set, cfg.batch_size, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, idx) in batches.iter().enumerate() {
            let rows: Vec<&IrregularSeries> = idx.iter().map(|&i| &train_set[i]).collect();
            let seed = cfg
                .seed
                .wrapping_add((epoch as u64) << 32)
                .wrapping_add(b as u64);
            let out = match parallel_gradients(model, &rows, cfg.workers, seed) {
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::NonFiniteLoss { epoch, batch: b })
                }
                other => other?,
            };
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += out.loss * rows.len() as f64;
            correct += out.correct;
            let mut grads = out.grads;
            clip_global_norm(&mut grads, cfg.clipnorm);
            opt.step(model.params_mut(), &grads, lr)?;
            model.project();
        }
        let val = evaluate(model, val_set)?;
        let record = EpochRecord {
            loss: loss_sum / train_set.len() as f64,
            acc: correct as f64 / train_set.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        on_epoch(epoch, &record);
        epochs.push(record);
        if better(&val, best.as_ref()) {
            best = Some(BestRecord {
                epoch,
                val_acc: val.accuracy,
                val_loss: val.loss,
            });
            best_params = model.params().clone();
        }
        if cfg.target_accuracy.is_some_and(|t| val.accuracy >= t) {
            break;
        }
    }
    *model.params_mut() = best_params;
    let best = best.ok_or_else(|| invalid("training ran zero epochs"))?;
    Ok(TrainReport { epochs, best })
}
