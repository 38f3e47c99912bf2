use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{EmbedCache, Normalization, RelationInit, RelationParams, ScoreActivation};
use super::context::{build_context, UserContext, DEFAULT_FALLBACK_SIZE};
use super::contrastive::{contrastive_loss_grad, ContrastiveSign};
use crate::data::{RatingDataset, SplitIndices, UserPartition};
use crate::error::{ConfigError, ModelError, Result, TrainError};
use crate::mf::{neighbors_from_history, LevelNeighbors, MfParams, PredictorCache, UserInput};
use crate::numerics::{axpy, AdamConfig, Matrix, ParamTensor, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    /// Query users are disjoint from the key users (few-shot users).
    Interpolation,
    /// The key users themselves are the query users, so the model learns to
    /// reproduce their embeddings and can then serve unseen users.
    Extrapolation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub heads: usize,
    pub sample_size: usize,
    pub normalization: Normalization,
    pub score_activation: ScoreActivation,
    pub init: RelationInit,
    /// Weight of the contrastive term (extrapolation only).
    pub lambda: f64,
    pub contrastive_sign: ContrastiveSign,
    pub adam: AdamConfig,
    /// Users per batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Draw new key samples at the start of every epoch after the first.
    pub resample_keys: bool,
    /// Also update the predictor weights of the pretrained model.
    pub finetune_predictor: bool,
    pub fallback_size: usize,
    pub neighbor_cap: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub context_seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            heads: 4,
            sample_size: 200,
            normalization: Normalization::Softmax,
            score_activation: ScoreActivation::Identity,
            init: RelationInit::Identity,
            lambda: 10.0,
            contrastive_sign: ContrastiveSign::Nll,
            adam: AdamConfig::with_learning_rate(1e-3),
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            resample_keys: false,
            finetune_predictor: true,
            fallback_size: DEFAULT_FALLBACK_SIZE,
            neighbor_cap: 50,
            init_seed: 1,
            shuffle_seed: 2,
            context_seed: 3,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.heads == 0 {
            return Err(ConfigError::invalid("relation.heads", "must be positive"));
        }
        if self.sample_size == 0 {
            return Err(ConfigError::invalid("relation.sample_size", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::invalid("adapt.batch_size", "must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(ConfigError::invalid("adapt.lambda", "must be non-negative"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(ConfigError::invalid("adapt.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// A user scored through the relation model.
#[derive(Clone, Debug, PartialEq)]
pub struct InductiveUser {
    /// Dataset user index.
    pub user: usize,
    /// Row in `P_k` for key users.
    pub row: Option<usize>,
    pub context: UserContext,
    /// Rated items per level (graph backbone).
    pub neighbors: LevelNeighbors,
    /// `(item, value)` pairs the loss is computed on.
    pub targets: Vec<(usize, f64)>,
}

/// Inductive embedding of an arbitrary history.
#[derive(Clone, Debug, PartialEq)]
pub struct InferredUser {
    pub embedding: Vec<f64>,
    pub context: UserContext,
    pub neighbors: LevelNeighbors,
}

/// One row of the attention dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub query_user: usize,
    pub head: usize,
    pub key_user: usize,
    pub weight: f64,
}

/// Loss components of one pass over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    /// Mean pointwise loss over all target ratings.
    pub rating: f64,
    /// Contrastive loss under the configured sign (0 when unused).
    pub contrastive: f64,
    pub targets: usize,
}

impl BatchLoss {
    pub fn total(&self, lambda: f64) -> f64 {
        self.rating + lambda * self.contrastive
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub contrastive_loss: Vec<f64>,
    /// Validation rating loss per checkpoint, starting with the initialization.
    pub validation_loss: Vec<f64>,
}

/// Pretrained factors plus a trained relation model. Only the predictor
/// weights inside `mf` differ from the pretrained ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductiveModel {
    pub mf: MfParams,
    pub rel: RelationParams,
    pub fallback_size: usize,
    pub neighbor_cap: usize,
    pub context_seed: u64,
}

impl InductiveModel {
    pub fn new(mf: MfParams, rel: RelationParams, fallback_size: usize, neighbor_cap: usize, context_seed: u64) -> Self {
        InductiveModel { mf, rel, fallback_size, neighbor_cap, context_seed }
    }

    /// Context and neighborhoods for a user with `history` of `(item, value)`.
    pub fn prepare_user(&self, user: usize, row: Option<usize>, history: &[(usize, f64)], targets: Vec<(usize, f64)>) -> Result<InductiveUser> {
        let items: Vec<usize> = history.iter().map(|h| h.0).collect();
        let context = build_context(&items, &self.mf.item_emb.value, self.context_seed, self.fallback_size)?;
        let neighbors = self.neighbors(history);
        Ok(InductiveUser { user, row, context, neighbors, targets })
    }

    fn neighbors(&self, history: &[(usize, f64)]) -> LevelNeighbors {
        if self.mf.graph.is_some() {
            neighbors_from_history(history, self.mf.feedback, self.neighbor_cap, self.context_seed)
        } else {
            Vec::new()
        }
    }

    fn input<'a>(&'a self, embedding: &'a [f64], neighbors: &'a [Vec<usize>], row: Option<usize>) -> UserInput<'a> {
        UserInput { embedding, bias: self.mf.mean_user_bias(), neighbors, row }
    }

    pub fn embed(&self, user: &InductiveUser) -> Result<Vec<f64>, ModelError> {
        self.rel.inductive_embedding(&self.mf.user_emb.value, &user.context.vector)
    }

    /// Builds the inductive embedding for a history; no state is modified.
    pub fn infer_user(&self, history: &[(usize, f64)]) -> Result<InferredUser, ModelError> {
        let items: Vec<usize> = history.iter().map(|h| h.0).collect();
        let context = build_context(&items, &self.mf.item_emb.value, self.context_seed, self.fallback_size)?;
        let embedding = self.rel.inductive_embedding(&self.mf.user_emb.value, &context.vector)?;
        Ok(InferredUser { embedding, neighbors: self.neighbors(history), context })
    }

    pub fn score(&self, user: &InferredUser, item: usize) -> Result<f64, ModelError> {
        self.mf.predict_input(&self.input(&user.embedding, &user.neighbors, None), item)
    }

    /// The `k` highest-scoring `candidates`, ties broken by ascending item.
    pub fn top_k(&self, user: &InferredUser, candidates: &[usize], k: usize) -> Result<Vec<(usize, f64)>, ModelError> {
        let mut scored = candidates.iter().map(|&i| self.score(user, i).map(|s| (i, s))).collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Attention weights of every head for each `(user, history)`, keyed by
    /// dataset user indices.
    pub fn export_attention(&self, users: &[(usize, Vec<usize>)]) -> Result<Vec<AttentionRow>, ModelError> {
        let mut rows = Vec::new();
        for (user, history) in users {
            let ctx = build_context(history, &self.mf.item_emb.value, self.context_seed, self.fallback_size)?;
            let att = self.rel.attention(&self.mf.user_emb.value, &ctx.vector)?;
            for (head, weights) in att.heads.iter().enumerate() {
                for &(r, weight) in weights {
                    rows.push(AttentionRow { query_user: *user, head, key_user: self.mf.key_users[r], weight });
                }
            }
        }
        Ok(rows)
    }

    /// Mean rating loss over the batch's targets plus the contrastive term.
    pub fn objective(&self, batch: &[&InductiveUser], lambda: f64, sign: ContrastiveSign) -> Result<BatchLoss, ModelError> {
        let tables = self.rel.tables(&self.mf.user_emb.value);
        let mut embeddings = Vec::with_capacity(batch.len());
        let mut loss = BatchLoss::default();
        let mut cache = PredictorCache::default();
        for u in batch {
            let e = self.rel.forward(&tables, &u.context.vector, &mut EmbedCache::default())?;
            let input = self.input(&e, &u.neighbors, u.row);
            for &(item, target) in &u.targets {
                let s = self.mf.score(&input, item, &mut cache);
                loss.rating += crate::mf::pointwise_loss(s, target, self.mf.feedback);
                loss.targets += 1;
            }
            embeddings.push(e);
        }
        if loss.targets > 0 {
            loss.rating /= loss.targets as f64;
        }
        if lambda > 0.0 {
            if let Some((p, pt)) = self.contrastive_pair(batch, &embeddings) {
                loss.contrastive = contrastive_loss_grad(&p, &pt, sign).0;
            }
        }
        Ok(loss)
    }

    fn contrastive_pair(&self, batch: &[&InductiveUser], embeddings: &[Vec<f64>]) -> Option<(Matrix, Matrix)> {
        let rows: Option<Vec<usize>> = batch.iter().map(|u| u.row).collect();
        let rows = rows?;
        let d = self.mf.dim;
        let p = Matrix::from_vec(rows.len(), d, rows.iter().flat_map(|&r| self.mf.user_emb.value.row(r).to_vec()).collect()).ok()?;
        let pt = Matrix::from_vec(rows.len(), d, embeddings.concat()).ok()?;
        Some((p, pt))
    }

    /// Accumulates gradients of [`InductiveModel::objective`] into the
    /// relation weights and, with `finetune`, the predictor weights.
    pub fn accumulate(&mut self, batch: &[&InductiveUser], lambda: f64, sign: ContrastiveSign, finetune: bool) -> Result<BatchLoss, ModelError> {
        let tables = self.rel.tables(&self.mf.user_emb.value);
        let n_targets: usize = batch.iter().map(|u| u.targets.len()).sum();
        let scale = if n_targets > 0 { 1.0 / n_targets as f64 } else { 0.0 };
        let mut caches = Vec::with_capacity(batch.len());
        let mut embeddings = Vec::with_capacity(batch.len());
        for u in batch {
            let mut cache = EmbedCache::default();
            embeddings.push(self.rel.forward(&tables, &u.context.vector, &mut cache)?);
            caches.push(cache);
        }
        let mut loss = BatchLoss { targets: n_targets, ..Default::default() };
        let mut grads: Vec<Vec<f64>> = vec![vec![0.0; self.mf.dim]; batch.len()];
        let mut pcache = PredictorCache::default();
        let bias = self.mf.mean_user_bias();
        for (k, u) in batch.iter().enumerate() {
            let input = UserInput { embedding: &embeddings[k], bias, neighbors: &u.neighbors, row: u.row };
            for &(item, target) in &u.targets {
                let (l, dp) = self.mf.inductive_step(&input, item, target, scale, finetune, &mut pcache);
                loss.rating += l;
                axpy(1.0, &dp, &mut grads[k]);
            }
        }
        loss.rating *= scale;
        if lambda > 0.0 {
            if let Some((p, pt)) = self.contrastive_pair(batch, &embeddings) {
                let (c, g) = contrastive_loss_grad(&p, &pt, sign);
                loss.contrastive = c;
                for (k, grad) in grads.iter_mut().enumerate() {
                    axpy(lambda, g.row(k), grad);
                }
            }
        }
        for (k, u) in batch.iter().enumerate() {
            self.rel.backward(&tables, &self.mf.user_emb.value, &u.context.vector, &caches[k], &grads[k]);
        }
        Ok(loss)
    }

    fn step(&mut self, adam: &AdamConfig, finetune: bool) -> Result<(), TrainError> {
        self.rel.adam_step_all(adam)?;
        if finetune {
            self.mf.predictor.adam_step_all(adam)?;
        }
        Ok(())
    }

    fn validation_loss(&self, users: &[InductiveUser]) -> Result<f64, ModelError> {
        let refs: Vec<&InductiveUser> = users.iter().collect();
        Ok(self.objective(&refs, 0.0, ContrastiveSign::Nll)?.rating)
    }
}

impl Parameterized for InductiveModel {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        self.rel.visit_params(f);
        self.mf.predictor.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        self.rel.visit_params_mut(f);
        self.mf.predictor.visit_params_mut(f);
    }
}

/// `(item, value)` pairs of each user over the rating indices `indices`.
pub fn user_ratings(ds: &RatingDataset, indices: &[usize]) -> Vec<Vec<(usize, f64)>> {
    let mut out = vec![Vec::new(); ds.num_users];
    for &k in indices {
        let r = &ds.ratings[k];
        out[r.user].push((r.item, r.value));
    }
    out
}

/// Trains the relation model on top of frozen `P_k` and `Q`.
pub fn adapt(
    mode: AdaptMode,
    mf: &MfParams,
    ds: &RatingDataset,
    split: &SplitIndices,
    partition: &UserPartition,
    cfg: &AdaptConfig,
) -> Result<(InductiveModel, AdaptReport)> {
    cfg.validate()?;
    mf.validate()?;
    let users: Vec<usize> = match mode {
        AdaptMode::Interpolation => {
            if let Some(&u) = partition.query_users.iter().find(|&&u| mf.key_row(u).is_some()) {
                return Err(ConfigError::invalid("split", format!("query user {u} is also a key user; interpolation needs disjoint sets")).into());
            }
            partition.query_users.clone()
        }
        AdaptMode::Extrapolation => mf.key_users.clone(),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let rel = RelationParams::init(
        mf.dim,
        cfg.heads,
        cfg.sample_size,
        mf.num_key_users(),
        cfg.normalization,
        cfg.score_activation,
        cfg.init,
        &mut init_rng,
    )?;
    let mut model = InductiveModel::new(mf.clone(), rel, cfg.fallback_size, cfg.neighbor_cap, cfg.context_seed);
    model.mf.visit_params_mut(&mut |p| p.reset_optimizer());
    let frozen = mf.embedding_checksum();

    let train_hist = user_ratings(ds, &split.train);
    let val_hist = user_ratings(ds, &split.validation);
    let mut train_users = Vec::new();
    let mut val_users = Vec::new();
    for &u in &users {
        let history = &train_hist[u];
        if history.is_empty() {
            continue;
        }
        let row = mf.key_row(u);
        train_users.push(model.prepare_user(u, row, history, history.clone())?);
        if !val_hist[u].is_empty() {
            val_users.push(model.prepare_user(u, row, history, val_hist[u].clone())?);
        }
    }
    if train_users.is_empty() {
        return Err(ConfigError::invalid("split", "no query user has training ratings").into());
    }
    let lambda = match mode {
        AdaptMode::Interpolation => 0.0,
        AdaptMode::Extrapolation => cfg.lambda,
    };

    let mut report = AdaptReport::default();
    let mut best_loss = model.validation_loss(&val_users)?;
    report.validation_loss.push(best_loss);
    let mut best = model.clone();
    let mut since_best = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_users.len()).collect();
    model.zero_grads();

    for epoch in 1..=cfg.max_epochs {
        if cfg.resample_keys && epoch > 1 {
            model.rel.resample_keys(mf.num_key_users(), &mut rng);
        }
        order.shuffle(&mut rng);
        let (mut rating_sum, mut contrastive_sum, mut target_sum, mut batches) = (0.0, 0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&InductiveUser> = chunk.iter().map(|&k| &train_users[k]).collect();
            let loss = model.accumulate(&batch, lambda, cfg.contrastive_sign, cfg.finetune_predictor)?;
            if !loss.total(lambda).is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b }.into());
            }
            model.step(&cfg.adam, cfg.finetune_predictor)?;
            rating_sum += loss.rating * loss.targets as f64;
            target_sum += loss.targets;
            contrastive_sum += loss.contrastive;
            batches += 1;
        }
        report.train_loss.push(rating_sum / target_sum.max(1) as f64);
        report.contrastive_loss.push(contrastive_sum / batches.max(1) as f64);
        report.epochs_run = epoch;
        let val = model.validation_loss(&val_users)?;
        if !val.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: 0 }.into());
        }
        report.validation_loss.push(val);
        log::info!(
            "adapt epoch {epoch}: train {:.5} contrastive {:.5} validation {val:.5}",
            report.train_loss[epoch - 1],
            report.contrastive_loss[epoch - 1]
        );
        if val_users.is_empty() || val < best_loss {
            best_loss = val;
            best = model.clone();
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    debug_assert_eq!(best.mf.embedding_checksum(), frozen);
    Ok((best, report))
}
