//! Stage one: matrix factorization over key users with a pluggable
//! interaction function.

mod graph;
mod mlp;
mod predictor;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use graph::{levels_for, neighbors_from_history, rating_level, BipartiteGraph, LevelNeighbors, EXPLICIT_LEVELS};
pub use mlp::{Dense, Mlp, MlpCache};
pub use predictor::{GcPredictor, NnPredictor, Predictor};
pub use train::{pointwise_loss, pointwise_loss_grad, pretrain, PretrainConfig, PretrainReport, Sample};

pub(crate) use predictor::{PairRef, PredictorCache, TableGrads};

use crate::data::Feedback;
use crate::error::{ConfigError, ModelError};
use crate::numerics::{Matrix, ParamTensor, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Dot,
    Nn,
    Gc,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Dot => "dot",
            Backbone::Nn => "nn",
            Backbone::Gc => "gc",
        })
    }
}

impl FromStr for Backbone {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(Backbone::Dot),
            "nn" => Ok(Backbone::Nn),
            "gc" => Ok(Backbone::Gc),
            other => Err(ConfigError::invalid("model.backbone", format!("unknown backbone `{other}` (expected dot, nn or gc)"))),
        }
    }
}

/// Learned factors of the key users and all items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfParams {
    pub backbone: Backbone,
    pub dim: usize,
    pub feedback: Feedback,
    /// Dataset user index of each row of `user_emb`, ascending.
    pub key_users: Vec<usize>,
    /// `P_k`, one row per key user.
    pub user_emb: ParamTensor,
    /// `Q`, one row per item.
    pub item_emb: ParamTensor,
    pub user_bias: ParamTensor,
    pub item_bias: ParamTensor,
    pub global_bias: ParamTensor,
    /// Frozen global bias (strict mode keeps it at zero).
    pub train_global_bias: bool,
    pub predictor: Predictor,
    /// Rating-level neighborhoods over the pretraining ratings (graph backbone).
    pub graph: Option<BipartiteGraph>,
}

/// The user side of a prediction for someone who may not have a row in `P_k`.
#[derive(Clone, Copy, Debug)]
pub struct UserInput<'a> {
    pub embedding: &'a [f64],
    pub bias: f64,
    /// Items the user rated, per level; only read by the graph backbone.
    pub neighbors: &'a [Vec<usize>],
    /// Row in `P_k` when the user is a key user.
    pub row: Option<usize>,
}

impl MfParams {
    /// Randomly initialized parameters: embeddings `N(0, (0.1/√d)²)`, Glorot
    /// predictor weights, zero biases.
    pub fn init<R: Rng>(
        backbone: Backbone,
        dim: usize,
        hidden: usize,
        key_users: Vec<usize>,
        num_items: usize,
        feedback: Feedback,
        rng: &mut R,
    ) -> Self {
        let sd = 0.1 / (dim as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("positive sd");
        let table = |rows: usize, rng: &mut R| {
            let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
            Matrix::from_vec(rows, dim, data).expect("shape")
        };
        let m = key_users.len();
        let user_emb = ParamTensor::embedding("P", table(m, rng));
        let item_emb = ParamTensor::embedding("Q", table(num_items, rng));
        let predictor = match backbone {
            Backbone::Dot => Predictor::Dot,
            Backbone::Nn => Predictor::Nn(NnPredictor::new(dim, hidden, rng)),
            Backbone::Gc => Predictor::Gc(GcPredictor::new(dim, hidden, levels_for(feedback), rng)),
        };
        MfParams {
            backbone,
            dim,
            feedback,
            key_users,
            user_emb,
            item_emb,
            user_bias: ParamTensor::new("b_u", Matrix::zeros(m, 1)),
            item_bias: ParamTensor::new("b_i", Matrix::zeros(num_items, 1)),
            global_bias: ParamTensor::new("g", Matrix::zeros(1, 1)),
            train_global_bias: true,
            predictor,
            graph: None,
        }
    }

    pub fn num_key_users(&self) -> usize {
        self.key_users.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.value.rows()
    }

    /// Row of `P_k` holding dataset user `user`.
    pub fn key_row(&self, user: usize) -> Option<usize> {
        self.key_users.binary_search(&user).ok()
    }

    /// Mean key-user bias, standing in for the bias of users without a row.
    pub fn mean_user_bias(&self) -> f64 {
        let b = self.user_bias.value.as_slice();
        if b.is_empty() {
            0.0
        } else {
            b.iter().sum::<f64>() / b.len() as f64
        }
    }

    /// Neighbors of key row `row` in the pretraining graph (empty without one).
    pub fn row_neighbors(&self, row: usize) -> &[Vec<usize>] {
        self.graph.as_ref().map(|g| g.user_neighbors[row].as_slice()).unwrap_or(&[])
    }

    fn item_neighbors(&self, item: usize) -> &[Vec<usize>] {
        self.graph.as_ref().map(|g| g.item_neighbors[item].as_slice()).unwrap_or(&[])
    }

    fn check_item(&self, item: usize) -> Result<(), ModelError> {
        if item >= self.num_items() {
            return Err(ModelError::OutOfRange { kind: "item", index: item, size: self.num_items() });
        }
        Ok(())
    }

    /// The user side for a key row.
    pub fn key_input(&self, row: usize) -> UserInput<'_> {
        UserInput {
            embedding: self.user_emb.value.row(row),
            bias: self.user_bias.value.as_slice()[row],
            neighbors: self.row_neighbors(row),
            row: Some(row),
        }
    }

    /// Score for dataset user `user` on `item`. With `embedding_override` the
    /// given vector replaces the user's row of `P_k`; a user without a row then
    /// gets the mean key-user bias and no graph neighbors.
    pub fn predict(&self, user: usize, item: usize, embedding_override: Option<&[f64]>) -> Result<f64, ModelError> {
        self.check_item(item)?;
        let row = self.key_row(user);
        let input = match (row, embedding_override) {
            (Some(r), None) => self.key_input(r),
            (Some(r), Some(e)) => UserInput { embedding: e, ..self.key_input(r) },
            (None, Some(e)) => UserInput { embedding: e, bias: self.mean_user_bias(), neighbors: &[], row: None },
            (None, None) => {
                return Err(ModelError::OutOfRange { kind: "key user", index: user, size: self.num_key_users() });
            }
        };
        self.predict_input(&input, item)
    }

    pub fn predict_input(&self, user: &UserInput<'_>, item: usize) -> Result<f64, ModelError> {
        self.check_item(item)?;
        if user.embedding.len() != self.dim {
            return Err(ModelError::OutOfRange { kind: "embedding length", index: user.embedding.len(), size: self.dim });
        }
        Ok(self.score(user, item, &mut PredictorCache::default()))
    }

    pub(crate) fn pair<'a>(&'a self, user: &UserInput<'a>, item: usize) -> PairRef<'a> {
        PairRef {
            p: user.embedding,
            q: self.item_emb.value.row(item),
            user_neighbors: user.neighbors,
            item_neighbors: self.item_neighbors(item),
            p_table: &self.user_emb.value,
            q_table: &self.item_emb.value,
            item,
            user_row: user.row,
        }
    }

    pub(crate) fn score(&self, user: &UserInput<'_>, item: usize, cache: &mut PredictorCache) -> f64 {
        let f = self.predictor.forward(&self.pair(user, item), cache);
        f + user.bias + self.item_bias.value.as_slice()[item] + self.global_bias.value.as_slice()[0]
    }

    /// Loss of one sample with gradients w.r.t. predictor weights (when
    /// `train_weights`) accumulated, scaled by `scale`. Returns the unscaled
    /// loss and `∂(scale·loss)/∂p`. Embedding tables and biases are untouched.
    pub(crate) fn inductive_step(
        &mut self,
        user: &UserInput<'_>,
        item: usize,
        target: f64,
        scale: f64,
        train_weights: bool,
        cache: &mut PredictorCache,
    ) -> (f64, Vec<f64>) {
        let s = self.score(user, item, cache);
        let loss = pointwise_loss(s, target, self.feedback);
        let ds = scale * pointwise_loss_grad(s, target, self.feedback);
        let mut dp = vec![0.0; self.dim];
        let mut dq = vec![0.0; self.dim];
        let pair = PairRef {
            p: user.embedding,
            q: self.item_emb.value.row(item),
            user_neighbors: user.neighbors,
            item_neighbors: self.graph.as_ref().map(|g| g.item_neighbors[item].as_slice()).unwrap_or(&[]),
            p_table: &self.user_emb.value,
            q_table: &self.item_emb.value,
            item,
            user_row: user.row,
        };
        self.predictor.backward(&pair, cache, ds, train_weights, &mut dp, &mut dq, None);
        (loss, dp)
    }

    /// Order-sensitive digest of `P_k` and `Q`.
    pub fn embedding_checksum(&self) -> u64 {
        self.user_emb.value.checksum() ^ self.item_emb.value.checksum().rotate_left(1)
    }

    /// Checks loaded parameters for internal consistency.
    pub fn validate(&self) -> Result<(), ModelError> {
        let m = self.key_users.len();
        let n = self.item_emb.value.rows();
        let ok = self.user_emb.shape() == (m, self.dim)
            && self.item_emb.shape() == (n, self.dim)
            && self.user_bias.shape() == (m, 1)
            && self.item_bias.shape() == (n, 1)
            && self.global_bias.shape() == (1, 1)
            && self.key_users.windows(2).all(|w| w[0] < w[1]);
        let predictor_ok = matches!(
            (&self.predictor, self.backbone),
            (Predictor::Dot, Backbone::Dot) | (Predictor::Nn(_), Backbone::Nn) | (Predictor::Gc(_), Backbone::Gc)
        );
        if !ok || !predictor_ok {
            return Err(ModelError::BackboneMismatch(format!("inconsistent {} parameters", self.backbone)));
        }
        if self.backbone == Backbone::Gc && self.graph.is_none() {
            return Err(ModelError::BackboneMismatch("graph backbone without a rating graph".into()));
        }
        Ok(())
    }
}

impl Parameterized for MfParams {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.user_emb);
        f(&self.item_emb);
        f(&self.user_bias);
        f(&self.item_bias);
        f(&self.global_bias);
        self.predictor.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.user_emb);
        f(&mut self.item_emb);
        f(&mut self.user_bias);
        f(&mut self.item_bias);
        f(&mut self.global_bias);
        self.predictor.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests;
