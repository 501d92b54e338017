use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{positive_class_weight, LossNorms, Logits, Stgnn};
use super::tape::Mat;
use crate::error::{Error, Result};
use crate::experiment::ShotRecord;

/// Samples per tape. Fixed so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Adam when set, plain gradient descent otherwise.
    pub adaptive: bool,
    pub epochs: usize,
    /// Zero means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Overrides the dataset-derived positive-class weight.
    pub pos_weight: Option<f64>,
    /// Global gradient-norm clip, disabled when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            adaptive: true,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            pos_weight: None,
            clip_norm: Some(5.0),
        }
    }
}

/// One structured log line per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub logical_loss: f64,
    pub mask_loss: f64,
    /// Running values over the epoch's training batches.
    pub logical_accuracy: f64,
    pub loss_precision: f64,
    pub loss_recall: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} logical_loss={:.6} mask_loss={:.6} logical_accuracy={:.4} \
             loss_precision={:.4} loss_recall={:.4} seconds={:.2}",
            self.epoch,
            self.loss,
            self.logical_loss,
            self.mask_loss,
            self.logical_accuracy,
            self.loss_precision,
            self.loss_recall,
            self.seconds
        )
    }
}

enum Optimizer {
    Sgd,
    Adam { m: Vec<Mat>, v: Vec<Mat>, step: u64 },
}

/// Stateful trainer; the epoch counter survives checkpoints.
pub struct Trainer {
    pub model: Stgnn,
    pub config: TrainConfig,
    pub epoch: usize,
    optimizer: Optimizer,
    initial_loss: Option<f64>,
    above: usize,
}

#[derive(Default)]
struct Tally {
    loss: f64,
    logical: f64,
    mask: f64,
    batches: usize,
    correct: usize,
    kept: usize,
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Tally {
    fn score(&mut self, records: &[&ShotRecord], logits: &[Logits]) {
        for (r, l) in records.iter().zip(logits) {
            for ((z, &y), &ex) in l.logical.iter().zip(&r.logical_labels).zip(&r.excluded_observables) {
                if !ex {
                    self.kept += 1;
                    self.correct += ((*z > 0.0) == y) as usize;
                }
            }
            for (z, truth) in l.loss.iter().zip(r.loss_mask_truth.iter()) {
                match (*z >= 0.0, truth) {
                    (true, true) => self.tp += 1,
                    (true, false) => self.fp += 1,
                    (false, true) => self.fn_ += 1,
                    _ => {}
                }
            }
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Trainer {
    pub fn new(model: Stgnn, config: TrainConfig) -> Self {
        Self::resume(model, config, 0)
    }

    /// Continues from `epoch` completed epochs. Optimizer moments restart.
    pub fn resume(model: Stgnn, config: TrainConfig, epoch: usize) -> Self {
        let optimizer = if config.adaptive {
            let zeros: Vec<Mat> = model.params.tensors().iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
            Optimizer::Adam {
                m: zeros.clone(),
                v: zeros,
                step: 0,
            }
        } else {
            Optimizer::Sgd
        };
        Trainer {
            model,
            config,
            epoch,
            optimizer,
            initial_loss: None,
            above: 0,
        }
    }

    /// Loss, logits and summed gradients of one batch, chunked in parallel
    /// and reduced in chunk order.
    fn batch_gradients(
        &self,
        batch: &[&ShotRecord],
        pos_weight: f64,
        rng_base: u64,
    ) -> Result<(super::model::LossTerms, Vec<Logits>, Vec<Mat>)> {
        let norms = LossNorms::of(batch, pos_weight);
        let dropout = self.model.config.dropout > 0.0;
        let parts: Vec<_> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(i, chunk)| {
                let rng = dropout.then(|| {
                    let mut r = ChaCha8Rng::seed_from_u64(self.model.config.seed ^ rng_base);
                    r.set_stream(i as u64);
                    r
                });
                self.model.gradients(chunk, norms, rng)
            })
            .collect::<Result<_>>()?;
        let mut iter = parts.into_iter();
        let (mut terms, mut logits, mut grads) = iter.next().expect("non-empty batch");
        for (t, l, g) in iter {
            terms.total += t.total;
            terms.loss_mask += t.loss_mask;
            terms.logical = match (terms.logical, t.logical) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.or(b),
            };
            logits.extend(l);
            for (acc, x) in grads.iter_mut().zip(g) {
                acc.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += b);
            }
        }
        Ok((terms, logits, grads))
    }

    fn apply(&mut self, mut grads: Vec<Mat>) {
        if let Some(clip) = self.config.clip_norm {
            let norm = grads.iter().flat_map(|g| &g.data).map(|x| x * x).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|x| *x *= s));
            }
        }
        let lr = self.config.learning_rate;
        match &mut self.optimizer {
            Optimizer::Sgd => {
                for (id, g) in grads.iter().enumerate() {
                    let p = self.model.params.get_mut(id);
                    p.data.iter_mut().zip(&g.data).for_each(|(p, g)| *p -= lr * g);
                }
            }
            Optimizer::Adam { m, v, step } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *step += 1;
                let c1 = 1.0 - B1.powi(*step as i32);
                let c2 = 1.0 - B2.powi(*step as i32);
                for (id, g) in grads.iter().enumerate() {
                    let p = self.model.params.get_mut(id);
                    for k in 0..g.data.len() {
                        let gk = g.data[k];
                        let mk = &mut m[id].data[k];
                        let vk = &mut v[id].data[k];
                        *mk = B1 * *mk + (1.0 - B1) * gk;
                        *vk = B2 * *vk + (1.0 - B2) * gk * gk;
                        p.data[k] -= lr * (*mk / c1) / ((*vk / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }

    /// Runs one epoch over `data`, shuffled by `(seed, epoch)`.
    pub fn epoch(&mut self, data: &[ShotRecord], pos_weight: f64) -> Result<EpochLog> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let bs = if self.config.batch_size == 0 {
            data.len()
        } else {
            self.config.batch_size
        };
        let mut tally = Tally::default();
        for (bi, idx) in order.chunks(bs).enumerate() {
            let batch: Vec<&ShotRecord> = idx.iter().map(|&i| &data[i]).collect();
            let salt = ((self.epoch as u64) << 32) ^ bi as u64;
            let (terms, logits, grads) = self.batch_gradients(&batch, pos_weight, salt)?;
            tally.loss += terms.total;
            tally.logical += terms.logical.unwrap_or(0.0);
            tally.mask += terms.loss_mask;
            tally.batches += 1;
            tally.score(&batch, &logits);
            self.apply(grads);
        }
        if !self.model.params.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after epoch {}", self.epoch + 1)));
        }
        self.epoch += 1;
        let n = tally.batches.max(1) as f64;
        let log = EpochLog {
            epoch: self.epoch,
            loss: tally.loss / n,
            logical_loss: tally.logical / n,
            mask_loss: tally.mask / n,
            logical_accuracy: ratio(tally.correct, tally.kept),
            loss_precision: ratio(tally.tp, tally.tp + tally.fp),
            loss_recall: ratio(tally.tp, tally.tp + tally.fn_),
            seconds: start.elapsed().as_secs_f64(),
        };
        let initial = *self.initial_loss.get_or_insert(log.loss);
        if log.loss > 10.0 * initial {
            self.above += 1;
            if self.above >= 3 {
                return Err(Error::Diverged(format!(
                    "loss {:.4e} above 10x the initial {:.4e} for 3 consecutive epochs (epoch {})",
                    log.loss, initial, log.epoch
                )));
            }
        } else {
            self.above = 0;
        }
        Ok(log)
    }

    /// Trains until `config.epochs` total epochs, calling `on_epoch` after
    /// each; stops early once `on_epoch` returns `false`.
    pub fn run(&mut self, data: &[ShotRecord], mut on_epoch: impl FnMut(&EpochLog) -> bool) -> Result<Vec<EpochLog>> {
        if data.is_empty() {
            return Err(Error::InvalidParameter("training set is empty".into()));
        }
        let pos_weight = self.config.pos_weight.unwrap_or_else(|| positive_class_weight(data));
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let log = self.epoch(data, pos_weight)?;
            let go_on = on_epoch(&log);
            logs.push(log);
            if !go_on {
                break;
            }
        }
        Ok(logs)
    }
}

/// Trains a model and returns it with the per-epoch history.
pub fn train(model: Stgnn, config: TrainConfig, data: &[ShotRecord]) -> Result<(Stgnn, Vec<EpochLog>)> {
    let mut t = Trainer::new(model, config);
    let logs = t.run(data, |_| true)?;
    Ok((t.model, logs))
}
