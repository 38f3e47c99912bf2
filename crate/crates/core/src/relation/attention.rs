use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ModelError};
use crate::numerics::{axpy, dot, Matrix, ParamTensor, Parameterized};

/// Negative-side slope of [`ScoreActivation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.2;

/// Smallest admissible `|Σ s|` under linear-ratio normalization.
pub const LINEAR_RATIO_EPSILON: f64 = 1e-12;

/// How raw attention scores become weights over the sampled key users.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `exp(s_u) / Σ exp(s_v)`.
    #[default]
    Softmax,
    /// `s_u / Σ s_v`; weights may be negative.
    LinearRatio,
}

/// Elementwise map applied to raw scores before normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreActivation {
    #[default]
    Identity,
    /// `max(s, 0.2 s)`.
    LeakyRelu,
}

impl ScoreActivation {
    fn apply(self, s: f64) -> f64 {
        match self {
            ScoreActivation::Identity => s,
            ScoreActivation::LeakyRelu if s > 0.0 => s,
            ScoreActivation::LeakyRelu => LEAKY_SLOPE * s,
        }
    }

    fn derivative(self, s: f64) -> f64 {
        match self {
            ScoreActivation::Identity => 1.0,
            ScoreActivation::LeakyRelu if s > 0.0 => 1.0,
            ScoreActivation::LeakyRelu => LEAKY_SLOPE,
        }
    }
}

/// Initial values of the value and output projections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationInit {
    /// Glorot-uniform everywhere.
    Xavier,
    /// `W_v = I` and `W_o = [I/L … I/L]`, so the initial embedding is the
    /// head-averaged attention-weighted mean of key embeddings.
    #[default]
    Identity,
}

/// One attention head over a fixed sample of key users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// Score vector `e = [e_q; e_k]`, length `2d`.
    pub e: ParamTensor,
    pub w_q: ParamTensor,
    pub w_k: ParamTensor,
    pub w_v: ParamTensor,
    /// Rows of `P_k` this head attends over, ascending.
    pub key_sample: Vec<usize>,
}

/// Weights of the inductive relation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationParams {
    pub dim: usize,
    pub heads: Vec<AttentionHead>,
    /// Output projection, `d × (L·d)`.
    pub w_o: ParamTensor,
    pub normalization: Normalization,
    pub score_activation: ScoreActivation,
}

/// Per-head attention weights as `(key row, weight)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub heads: Vec<Vec<(usize, f64)>>,
}

/// Projected key and value embeddings of each head's sample, shared by every
/// user of a batch.
#[derive(Clone, Debug)]
pub(crate) struct HeadTables {
    keys: Vec<Vec<f64>>,
    values: Vec<Matrix>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct EmbedCache {
    query: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    concat: Vec<f64>,
}

fn uniform<R: Rng>(rows: usize, cols: usize, fan: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / fan as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn sorted_sample<R: Rng>(rng: &mut R, population: usize, size: usize) -> Vec<usize> {
    let mut s = sample(rng, population, size.min(population)).into_vec();
    s.sort_unstable();
    s
}

impl RelationParams {
    pub fn init<R: Rng>(
        dim: usize,
        num_heads: usize,
        sample_size: usize,
        num_key_rows: usize,
        normalization: Normalization,
        score_activation: ScoreActivation,
        init: RelationInit,
        rng: &mut R,
    ) -> Result<Self, ConfigError> {
        if num_heads == 0 {
            return Err(ConfigError::invalid("relation.heads", "must be positive"));
        }
        if sample_size == 0 || num_key_rows == 0 {
            return Err(ConfigError::invalid("relation.sample_size", "need at least one key user per head"));
        }
        let heads = (0..num_heads)
            .map(|l| {
                let w_v = match init {
                    RelationInit::Xavier => uniform(dim, dim, 2 * dim, rng),
                    RelationInit::Identity => Matrix::identity(dim),
                };
                AttentionHead {
                    e: ParamTensor::new(format!("rel.{l}.e"), uniform(2 * dim, 1, 2 * dim + 1, rng)),
                    w_q: ParamTensor::new(format!("rel.{l}.w_q"), uniform(dim, dim, 2 * dim, rng)),
                    w_k: ParamTensor::new(format!("rel.{l}.w_k"), uniform(dim, dim, 2 * dim, rng)),
                    w_v: ParamTensor::new(format!("rel.{l}.w_v"), w_v),
                    key_sample: sorted_sample(rng, num_key_rows, sample_size),
                }
            })
            .collect();
        let w_o = match init {
            RelationInit::Xavier => uniform(dim, num_heads * dim, dim + num_heads * dim, rng),
            RelationInit::Identity => {
                let mut m = Matrix::zeros(dim, num_heads * dim);
                for l in 0..num_heads {
                    for k in 0..dim {
                        m.set(k, l * dim + k, 1.0 / num_heads as f64);
                    }
                }
                m
            }
        };
        Ok(RelationParams { dim, heads, w_o: ParamTensor::new("rel.w_o", w_o), normalization, score_activation })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Draws fresh key samples of the same sizes.
    pub fn resample_keys<R: Rng>(&mut self, num_key_rows: usize, rng: &mut R) {
        for head in &mut self.heads {
            head.key_sample = sorted_sample(rng, num_key_rows, head.key_sample.len());
        }
    }

    pub(crate) fn tables(&self, p: &Matrix) -> HeadTables {
        let mut keys = Vec::with_capacity(self.heads.len());
        let mut values = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let e_k = &head.e.value.as_slice()[self.dim..];
            // e_k · (W_k p_u) = (W_kᵀ e_k) · p_u
            let folded = head.w_k.value.tr_mul_vec(e_k);
            keys.push(head.key_sample.iter().map(|&r| dot(&folded, p.row(r))).collect());
            let mut v = Matrix::zeros(head.key_sample.len(), self.dim);
            for (j, &r) in head.key_sample.iter().enumerate() {
                head.w_v.value.mul_vec_into(p.row(r), v.row_mut(j));
            }
            values.push(v);
        }
        HeadTables { keys, values }
    }

    fn normalize(&self, head: usize, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        match self.normalization {
            Normalization::Softmax => {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
                let total: f64 = exps.iter().sum();
                Ok(exps.into_iter().map(|v| v / total).collect())
            }
            Normalization::LinearRatio => {
                let total: f64 = z.iter().sum();
                if total.abs() < LINEAR_RATIO_EPSILON || !total.is_finite() {
                    return Err(ModelError::DegenerateNormalization { head, sum: total });
                }
                Ok(z.iter().map(|&v| v / total).collect())
            }
        }
    }

    /// Inductive embedding `W_o [⊕_l Σ_u c_u^(l) W_v^(l) p_u]` for context
    /// vector `ctx`.
    pub(crate) fn forward(&self, tables: &HeadTables, ctx: &[f64], cache: &mut EmbedCache) -> Result<Vec<f64>, ModelError> {
        let d = self.dim;
        let n_heads = self.heads.len();
        cache.query.resize(n_heads, Vec::new());
        cache.raw.resize(n_heads, Vec::new());
        cache.weights.resize(n_heads, Vec::new());
        cache.concat.clear();
        cache.concat.resize(n_heads * d, 0.0);
        for (l, head) in self.heads.iter().enumerate() {
            if head.key_sample.is_empty() {
                return Err(ModelError::EmptyKeySample(l));
            }
            let a = head.w_q.value.mul_vec(ctx);
            let base = dot(&head.e.value.as_slice()[..d], &a);
            let raw: Vec<f64> = tables.keys[l].iter().map(|&k| base + k).collect();
            let z: Vec<f64> = raw.iter().map(|&s| self.score_activation.apply(s)).collect();
            let c = self.normalize(l, &z)?;
            let h = &mut cache.concat[l * d..(l + 1) * d];
            for (j, &w) in c.iter().enumerate() {
                axpy(w, tables.values[l].row(j), h);
            }
            cache.query[l] = a;
            cache.raw[l] = raw;
            cache.weights[l] = c;
        }
        Ok(self.w_o.value.mul_vec(&cache.concat))
    }

    /// Accumulates parameter gradients for upstream `∂L/∂p̃`.
    pub(crate) fn backward(&mut self, tables: &HeadTables, p: &Matrix, ctx: &[f64], cache: &EmbedCache, dp_tilde: &[f64]) {
        let d = self.dim;
        self.w_o.grad.add_outer(1.0, dp_tilde, &cache.concat);
        let dconcat = self.w_o.value.tr_mul_vec(dp_tilde);
        for (l, head) in self.heads.iter_mut().enumerate() {
            let dh = &dconcat[l * d..(l + 1) * d];
            let c = &cache.weights[l];
            let raw = &cache.raw[l];
            let dc: Vec<f64> = (0..c.len()).map(|j| dot(dh, tables.values[l].row(j))).collect();
            let z_grad: Vec<f64> = match self.normalization {
                Normalization::Softmax => {
                    let mean: f64 = c.iter().zip(&dc).map(|(a, b)| a * b).sum();
                    c.iter().zip(&dc).map(|(&cj, &g)| cj * (g - mean)).collect()
                }
                Normalization::LinearRatio => {
                    let total: f64 = raw.iter().map(|&s| self.score_activation.apply(s)).sum();
                    let mean: f64 = c.iter().zip(&dc).map(|(a, b)| a * b).sum();
                    dc.iter().map(|&g| (g - mean) / total).collect()
                }
            };
            let ds: Vec<f64> = z_grad.iter().zip(raw).map(|(&g, &s)| g * self.score_activation.derivative(s)).collect();
            let ds_total: f64 = ds.iter().sum();

            let mut weighted_p = vec![0.0; d];
            let mut score_p = vec![0.0; d];
            for (j, &r) in head.key_sample.iter().enumerate() {
                axpy(c[j], p.row(r), &mut weighted_p);
                axpy(ds[j], p.row(r), &mut score_p);
            }
            head.w_v.grad.add_outer(1.0, dh, &weighted_p);

            let (e_q, e_k) = head.e.value.as_slice().split_at(d);
            let da: Vec<f64> = e_q.iter().map(|&v| ds_total * v).collect();
            head.w_q.grad.add_outer(1.0, &da, ctx);
            head.w_k.grad.add_outer(1.0, e_k, &score_p);
            let dk = head.w_k.value.mul_vec(&score_p);
            let de = head.e.grad.as_mut_slice();
            axpy(ds_total, &cache.query[l], &mut de[..d]);
            axpy(1.0, &dk, &mut de[d..]);
        }
    }

    /// Attention weights of every head for context vector `ctx`.
    pub fn attention(&self, p: &Matrix, ctx: &[f64]) -> Result<AttentionWeights, ModelError> {
        let tables = self.tables(p);
        let mut cache = EmbedCache::default();
        self.forward(&tables, ctx, &mut cache)?;
        let heads = self.heads.iter().zip(&cache.weights).map(|(h, w)| h.key_sample.iter().copied().zip(w.iter().copied()).collect()).collect();
        Ok(AttentionWeights { heads })
    }

    /// Weights of head `l` only.
    pub fn head_attention(&self, l: usize, p: &Matrix, ctx: &[f64]) -> Result<Vec<(usize, f64)>, ModelError> {
        let head = self.heads.get(l).ok_or(ModelError::OutOfRange { kind: "head", index: l, size: self.heads.len() })?;
        if head.key_sample.is_empty() {
            return Err(ModelError::EmptyKeySample(l));
        }
        let d = self.dim;
        let a = head.w_q.value.mul_vec(ctx);
        let base = dot(&head.e.value.as_slice()[..d], &a);
        let folded = head.w_k.value.tr_mul_vec(&head.e.value.as_slice()[d..]);
        let z: Vec<f64> = head.key_sample.iter().map(|&r| self.score_activation.apply(base + dot(&folded, p.row(r)))).collect();
        let c = self.normalize(l, &z)?;
        Ok(head.key_sample.iter().copied().zip(c).collect())
    }

    /// Inductive embedding of a user with context vector `ctx`.
    pub fn inductive_embedding(&self, p: &Matrix, ctx: &[f64]) -> Result<Vec<f64>, ModelError> {
        let tables = self.tables(p);
        self.forward(&tables, ctx, &mut EmbedCache::default())
    }
}

impl Parameterized for RelationParams {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        for h in &self.heads {
            f(&h.e);
            f(&h.w_q);
            f(&h.w_k);
            f(&h.w_v);
        }
        f(&self.w_o);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        for h in &mut self.heads {
            f(&mut h.e);
            f(&mut h.w_q);
            f(&mut h.w_k);
            f(&mut h.w_v);
        }
        f(&mut self.w_o);
    }
}
