use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, BipartiteGraph, MfParams, PairRef, PredictorCache, TableGrads};
use crate::data::{Feedback, RatingDataset, SplitIndices};
use crate::error::{ConfigError, Result, TrainError};
use crate::numerics::{axpy, dot, AdamConfig, Parameterized};

/// `(score - target)²` for explicit feedback, binary cross-entropy of
/// `sigmoid(score)` against `target` for implicit feedback.
pub fn pointwise_loss(score: f64, target: f64, feedback: Feedback) -> f64 {
    match feedback {
        Feedback::Explicit => (score - target).powi(2),
        // softplus(s) - t·s, evaluated without overflow
        Feedback::Implicit => score.max(0.0) + (-score.abs()).exp().ln_1p() - target * score,
    }
}

/// Derivative of [`pointwise_loss`] w.r.t. the score.
pub fn pointwise_loss_grad(score: f64, target: f64, feedback: Feedback) -> f64 {
    match feedback {
        Feedback::Explicit => 2.0 * (score - target),
        Feedback::Implicit => crate::numerics::sigmoid(score) - target,
    }
}

/// One training observation addressed by key row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub row: usize,
    pub item: usize,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub backbone: Backbone,
    pub dim: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    /// Per-observation penalty `l2 * (|p_u|² + |q_i|²)` added to the loss.
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Learn a global bias initialized at the training mean; off means it
    /// stays at zero.
    pub global_bias: bool,
    /// Per-level neighbor cap of the graph backbone.
    pub neighbor_cap: usize,
    /// Negatives per positive, redrawn each epoch (implicit feedback only).
    pub negative_ratio: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            backbone: Backbone::Nn,
            dim: 16,
            hidden: 32,
            adam: AdamConfig { learning_rate: 1e-3, weight_decay: 0.0, ..Default::default() },
            l2: 0.0,
            batch_size: 256,
            max_epochs: 100,
            patience: 5,
            global_bias: true,
            neighbor_cap: 50,
            negative_ratio: 5,
            init_seed: 1,
            shuffle_seed: 2,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dim == 0 {
            return Err(ConfigError::invalid("model.dim", "must be positive"));
        }
        if self.hidden == 0 && self.backbone != Backbone::Dot {
            return Err(ConfigError::invalid("model.hidden", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::invalid("pretrain.batch_size", "must be positive"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(ConfigError::invalid("pretrain.learning_rate", "must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(ConfigError::invalid("pretrain.l2", "must be non-negative"));
        }
        if !(self.adam.weight_decay >= 0.0) {
            return Err(ConfigError::invalid("pretrain.weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    /// Epoch of the returned snapshot; 0 is the initialization.
    pub best_epoch: usize,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss per checkpoint, starting with the initialization.
    pub validation_loss: Vec<f64>,
}

impl MfParams {
    /// Mean pointwise loss over `samples`.
    pub fn mean_loss(&self, samples: &[Sample]) -> f64 {
        self.regularized_loss(samples, 0.0)
    }

    /// Mean over `samples` of the pointwise loss plus `l2 * (|p_u|² + |q_i|²)`.
    pub fn regularized_loss(&self, samples: &[Sample], l2: f64) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut cache = PredictorCache::default();
        let total: f64 = samples
            .iter()
            .map(|s| {
                let loss = pointwise_loss(self.score(&self.key_input(s.row), s.item, &mut cache), s.target, self.feedback);
                if l2 > 0.0 {
                    let p = self.user_emb.value.row(s.row);
                    let q = self.item_emb.value.row(s.item);
                    loss + l2 * (dot(p, p) + dot(q, q))
                } else {
                    loss
                }
            })
            .sum();
        total / samples.len() as f64
    }

    /// Accumulates the gradient of [`MfParams::regularized_loss`] into every
    /// tensor's `grad` and returns the mean pointwise loss without the penalty.
    pub fn accumulate_gradients(&mut self, samples: &[Sample], l2: f64) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let scale = 1.0 / samples.len() as f64;
        let mut cache = PredictorCache::default();
        let mut dp = vec![0.0; self.dim];
        let mut dq = vec![0.0; self.dim];
        let mut total = 0.0;
        for s in samples {
            let graph = self.graph.as_ref();
            let pair = PairRef {
                p: self.user_emb.value.row(s.row),
                q: self.item_emb.value.row(s.item),
                user_neighbors: graph.map(|g| g.user_neighbors[s.row].as_slice()).unwrap_or(&[]),
                item_neighbors: graph.map(|g| g.item_neighbors[s.item].as_slice()).unwrap_or(&[]),
                p_table: &self.user_emb.value,
                q_table: &self.item_emb.value,
                item: s.item,
                user_row: Some(s.row),
            };
            let f = self.predictor.forward(&pair, &mut cache);
            let score = f
                + self.user_bias.value.as_slice()[s.row]
                + self.item_bias.value.as_slice()[s.item]
                + self.global_bias.value.as_slice()[0];
            total += pointwise_loss(score, s.target, self.feedback);
            let ds = scale * pointwise_loss_grad(score, s.target, self.feedback);
            dp.fill(0.0);
            dq.fill(0.0);
            let tables = TableGrads { p: &mut self.user_emb.grad, q: &mut self.item_emb.grad };
            self.predictor.backward(&pair, &cache, ds, true, &mut dp, &mut dq, Some(tables));
            axpy(1.0, &dp, self.user_emb.grad.row_mut(s.row));
            axpy(1.0, &dq, self.item_emb.grad.row_mut(s.item));
            if l2 > 0.0 {
                axpy(2.0 * l2 * scale, self.user_emb.value.row(s.row), self.user_emb.grad.row_mut(s.row));
                axpy(2.0 * l2 * scale, self.item_emb.value.row(s.item), self.item_emb.grad.row_mut(s.item));
            }
            self.user_bias.grad.as_mut_slice()[s.row] += ds;
            self.item_bias.grad.as_mut_slice()[s.item] += ds;
            if self.train_global_bias {
                self.global_bias.grad.as_mut_slice()[0] += ds;
            }
        }
        total * scale
    }
}

/// Fits [`MfParams`] to the training ratings of `key_users` (sorted dataset
/// indices) and returns the snapshot with the lowest validation loss.
pub fn pretrain(ds: &RatingDataset, split: &SplitIndices, key_users: &[usize], cfg: &PretrainConfig) -> Result<(MfParams, PretrainReport)> {
    cfg.validate()?;
    let mut key_users = key_users.to_vec();
    key_users.sort_unstable();
    key_users.dedup();
    if cfg.dim > key_users.len().min(ds.num_items) {
        return Err(ConfigError::invalid("model.dim", format!("d = {} exceeds min(key users, items)", cfg.dim)).into());
    }
    let mut row_of = vec![None; ds.num_users];
    for (r, &u) in key_users.iter().enumerate() {
        row_of[u] = Some(r);
    }
    let collect = |indices: &[usize]| -> Vec<Sample> {
        indices
            .iter()
            .filter_map(|&k| {
                let r = &ds.ratings[k];
                row_of[r.user].map(|row| Sample { row, item: r.item, target: r.value })
            })
            .collect()
    };
    let train = collect(&split.train);
    let mut validation = collect(&split.validation);

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut params = MfParams::init(cfg.backbone, cfg.dim, cfg.hidden, key_users.clone(), ds.num_items, ds.feedback, &mut init_rng);
    params.train_global_bias = cfg.global_bias;
    if cfg.global_bias && ds.feedback == Feedback::Explicit && !train.is_empty() {
        params.global_bias.value.as_mut_slice()[0] = train.iter().map(|s| s.target).sum::<f64>() / train.len() as f64;
    }
    if cfg.backbone == Backbone::Gc {
        let edges = train.iter().map(|s| (s.row, s.item, s.target));
        params.graph = Some(BipartiteGraph::build(edges, key_users.len(), ds.num_items, ds.feedback, cfg.neighbor_cap, cfg.init_seed));
    }

    let implicit = ds.feedback == Feedback::Implicit && cfg.negative_ratio > 0;
    let positives = if implicit { positive_sets(&train, key_users.len()) } else { Vec::new() };
    if implicit {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed ^ 0x5eed);
        let negatives = draw_negatives(&validation, &positives, ds.num_items, cfg.negative_ratio, &mut rng);
        validation.extend(negatives);
    }

    let mut report = PretrainReport::default();
    let mut best_loss = params.mean_loss(&validation);
    report.validation_loss.push(best_loss);
    let mut best = params.clone();
    let mut since_best = 0;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    params.zero_grads();

    for epoch in 1..=cfg.max_epochs {
        let mut epoch_samples = train.clone();
        if implicit {
            let negatives = draw_negatives(&train, &positives, ds.num_items, cfg.negative_ratio, &mut shuffle_rng);
            epoch_samples.extend(negatives);
        }
        epoch_samples.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in epoch_samples.chunks(cfg.batch_size).enumerate() {
            let loss = params.accumulate_gradients(batch, cfg.l2);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b }.into());
            }
            loss_sum += loss * batch.len() as f64;
            params.adam_step_all(&cfg.adam)?;
        }
        let train_loss = loss_sum / epoch_samples.len().max(1) as f64;
        report.train_loss.push(train_loss);
        report.epochs_run = epoch;
        let val = params.mean_loss(&validation);
        if !val.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: 0 }.into());
        }
        report.validation_loss.push(val);
        log::info!("pretrain epoch {epoch}: train {train_loss:.5} validation {val:.5}");
        if validation.is_empty() || val < best_loss {
            best_loss = val;
            best = params.clone();
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, report))
}

fn positive_sets(samples: &[Sample], rows: usize) -> Vec<HashSet<usize>> {
    let mut sets = vec![HashSet::new(); rows];
    for s in samples.iter().filter(|s| s.target > 0.0) {
        sets[s.row].insert(s.item);
    }
    sets
}

fn draw_negatives<R: Rng>(samples: &[Sample], positives: &[HashSet<usize>], num_items: usize, ratio: usize, rng: &mut R) -> Vec<Sample> {
    let mut out = Vec::with_capacity(samples.len() * ratio);
    for s in samples.iter().filter(|s| s.target > 0.0) {
        let seen = &positives[s.row];
        if seen.len() >= num_items {
            continue;
        }
        for _ in 0..ratio {
            let item = loop {
                let c = rng.random_range(0..num_items);
                if !seen.contains(&c) {
                    break c;
                }
            };
            out.push(Sample { row: s.row, item, target: 0.0 });
        }
    }
    out
}
