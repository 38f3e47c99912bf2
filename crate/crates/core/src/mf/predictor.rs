//! Interaction functions `f(p, q)` for the three backbones. Biases are added by
//! the caller.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Dense, Mlp, MlpCache};
use crate::numerics::{axpy, dot, Activation, Matrix, ParamTensor, Parameterized};

/// Embeddings and neighborhoods entering one prediction.
pub(crate) struct PairRef<'a> {
    pub p: &'a [f64],
    pub q: &'a [f64],
    /// Items rated by the user, per level (graph backbone only).
    pub user_neighbors: &'a [Vec<usize>],
    /// Key-user rows that rated the item, per level (graph backbone only).
    pub item_neighbors: &'a [Vec<usize>],
    pub p_table: &'a Matrix,
    pub q_table: &'a Matrix,
    /// The item being scored; left out of the user's neighbors.
    pub item: usize,
    /// The user's key row, if any; left out of the item's neighbors.
    pub user_row: Option<usize>,
}

/// Gradient sinks for the embedding tables reached through neighborhoods.
pub(crate) struct TableGrads<'a> {
    pub p: &'a mut Matrix,
    pub q: &'a mut Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Predictor {
    /// `p · q`.
    Dot,
    /// `(p · q + nn([p ‖ q ‖ p ⊙ q])) / 2` with a tanh network.
    Nn(NnPredictor),
    /// Rating-level graph convolution followed by a ReLU network.
    Gc(GcPredictor),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnPredictor {
    pub mlp: Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcPredictor {
    /// `W_{q,m}`: transforms the mean embedding of items the user rated `m`.
    pub user_level: Vec<ParamTensor>,
    /// `W_{p,m}`: transforms the mean embedding of users who rated the item `m`.
    pub item_level: Vec<ParamTensor>,
    /// Combines the per-level user messages into `m_u`.
    pub user_combine: Dense,
    /// Combines the per-level item messages into `n_i`.
    pub item_combine: Dense,
    pub mlp: Mlp,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct PredictorCache {
    mlp: MlpCache,
    x: Vec<f64>,
    user_side: SideCache,
    item_side: SideCache,
}

#[derive(Clone, Debug, Default)]
struct SideCache {
    /// Mean neighbor embedding per level (empty when the level has no neighbors).
    means: Vec<Vec<f64>>,
    /// Pre-ReLU level message per level.
    pre: Vec<Vec<f64>>,
    /// Concatenated post-ReLU messages.
    concat: Vec<f64>,
    /// Combined message (`m_u` or `n_i`).
    combined: Vec<f64>,
}

impl NnPredictor {
    pub fn new<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        NnPredictor { mlp: Mlp::new("theta.nn", &[3 * dim, hidden, hidden, 1], Activation::Tanh, rng) }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        NnPredictor { mlp: Mlp::zeros("theta.nn", &[3 * dim, hidden, hidden, 1], Activation::Tanh) }
    }
}

impl GcPredictor {
    pub fn new<R: Rng>(dim: usize, hidden: usize, levels: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (2 * dim) as f64).sqrt();
        let square = |name: String, rng: &mut R| {
            let data = (0..dim * dim).map(|_| rng.random_range(-limit..limit)).collect();
            ParamTensor::new(name, Matrix::from_vec(dim, dim, data).expect("shape"))
        };
        let user_level = (0..levels).map(|m| square(format!("theta.gc.w_q.{m}"), rng)).collect();
        let item_level = (0..levels).map(|m| square(format!("theta.gc.w_p.{m}"), rng)).collect();
        GcPredictor {
            user_level,
            item_level,
            user_combine: Dense::xavier("theta.gc.fc_user", levels * dim, dim, rng),
            item_combine: Dense::xavier("theta.gc.fc_item", levels * dim, dim, rng),
            mlp: Mlp::new("theta.gc.nn", &[4 * dim, hidden, hidden, 1], Activation::Relu, rng),
        }
    }

    pub fn levels(&self) -> usize {
        self.user_level.len()
    }
}

impl Predictor {
    pub(crate) fn forward(&self, pair: &PairRef<'_>, cache: &mut PredictorCache) -> f64 {
        match self {
            Predictor::Dot => dot(pair.p, pair.q),
            Predictor::Nn(nn) => {
                let d = pair.p.len();
                cache.x.clear();
                cache.x.extend_from_slice(pair.p);
                cache.x.extend_from_slice(pair.q);
                cache.x.extend((0..d).map(|k| pair.p[k] * pair.q[k]));
                (dot(pair.p, pair.q) + nn.mlp.forward(&cache.x, &mut cache.mlp)) / 2.0
            }
            Predictor::Gc(gc) => {
                let d = pair.p.len();
                side_forward(&gc.user_level, &gc.user_combine, pair.user_neighbors, Some(pair.item), pair.q_table, d, &mut cache.user_side);
                side_forward(&gc.item_level, &gc.item_combine, pair.item_neighbors, pair.user_row, pair.p_table, d, &mut cache.item_side);
                let mu = &cache.user_side.combined;
                let ni = &cache.item_side.combined;
                cache.x.clear();
                cache.x.extend((0..d).map(|k| pair.p[k] * pair.q[k]));
                cache.x.extend((0..d).map(|k| pair.p[k] * mu[k]));
                cache.x.extend((0..d).map(|k| ni[k] * pair.q[k]));
                cache.x.extend((0..d).map(|k| ni[k] * mu[k]));
                gc.mlp.forward(&cache.x, &mut cache.mlp)
            }
        }
    }

    /// Backpropagates `∂L/∂f` from the last `forward` on `pair`.
    ///
    /// Gradients w.r.t. the direct embeddings are added to `dp`/`dq`;
    /// predictor weights accumulate only when `train_weights`; neighbor
    /// embeddings receive gradients only when `tables` is given.
    pub(crate) fn backward(
        &mut self,
        pair: &PairRef<'_>,
        cache: &PredictorCache,
        df: f64,
        train_weights: bool,
        dp: &mut [f64],
        dq: &mut [f64],
        tables: Option<TableGrads<'_>>,
    ) {
        match self {
            Predictor::Dot => {
                axpy(df, pair.q, dp);
                axpy(df, pair.p, dq);
            }
            Predictor::Nn(nn) => {
                let d = pair.p.len();
                axpy(df / 2.0, pair.q, dp);
                axpy(df / 2.0, pair.p, dq);
                let dx = nn.mlp.backward(&cache.mlp, df / 2.0, train_weights);
                for k in 0..d {
                    dp[k] += dx[k] + dx[2 * d + k] * pair.q[k];
                    dq[k] += dx[d + k] + dx[2 * d + k] * pair.p[k];
                }
            }
            Predictor::Gc(gc) => {
                let d = pair.p.len();
                let dx = gc.mlp.backward(&cache.mlp, df, train_weights);
                let mu = &cache.user_side.combined;
                let ni = &cache.item_side.combined;
                let mut dmu = vec![0.0; d];
                let mut dni = vec![0.0; d];
                for k in 0..d {
                    let (a, b, c, e) = (dx[k], dx[d + k], dx[2 * d + k], dx[3 * d + k]);
                    dp[k] += a * pair.q[k] + b * mu[k];
                    dq[k] += a * pair.p[k] + c * ni[k];
                    dmu[k] = b * pair.p[k] + e * ni[k];
                    dni[k] = c * pair.q[k] + e * mu[k];
                }
                let (p_sink, q_sink) = match tables {
                    Some(t) => (Some(t.p), Some(t.q)),
                    None => (None, None),
                };
                side_backward(
                    &mut gc.user_level,
                    &mut gc.user_combine,
                    pair.user_neighbors,
                    Some(pair.item),
                    &cache.user_side,
                    &dmu,
                    train_weights,
                    q_sink,
                );
                side_backward(
                    &mut gc.item_level,
                    &mut gc.item_combine,
                    pair.item_neighbors,
                    pair.user_row,
                    &cache.item_side,
                    &dni,
                    train_weights,
                    p_sink,
                );
            }
        }
    }
}

/// Mean of the neighbor rows at one level, leaving out `skip`. `None` when no
/// neighbor remains.
fn level_mean(list: &[usize], skip: Option<usize>, table: &Matrix, d: usize) -> Option<Vec<f64>> {
    let mut mean = vec![0.0; d];
    let mut n = 0usize;
    for &j in list.iter().filter(|&&j| Some(j) != skip) {
        axpy(1.0, table.row(j), &mut mean);
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let inv = 1.0 / n as f64;
    mean.iter_mut().for_each(|v| *v *= inv);
    Some(mean)
}

fn side_forward(
    level_w: &[ParamTensor],
    combine: &Dense,
    neighbors: &[Vec<usize>],
    skip: Option<usize>,
    table: &Matrix,
    d: usize,
    cache: &mut SideCache,
) {
    let levels = level_w.len();
    cache.means.resize(levels, Vec::new());
    cache.pre.resize(levels, Vec::new());
    cache.concat.clear();
    cache.concat.resize(levels * d, 0.0);
    for m in 0..levels {
        let list = neighbors.get(m).map(Vec::as_slice).unwrap_or(&[]);
        cache.means[m].clear();
        cache.pre[m].clear();
        let Some(mean) = level_mean(list, skip, table, d) else {
            continue;
        };
        let pre = level_w[m].value.mul_vec(&mean);
        for k in 0..d {
            cache.concat[m * d + k] = pre[k].max(0.0);
        }
        cache.means[m] = mean;
        cache.pre[m] = pre;
    }
    cache.combined.clear();
    cache.combined.resize(d, 0.0);
    combine.forward_into(&cache.concat, &mut cache.combined);
}

fn side_backward(
    level_w: &mut [ParamTensor],
    combine: &mut Dense,
    neighbors: &[Vec<usize>],
    skip: Option<usize>,
    cache: &SideCache,
    dcombined: &[f64],
    train_weights: bool,
    table_grad: Option<&mut Matrix>,
) {
    let d = dcombined.len();
    let dconcat = if train_weights { combine.backward(&cache.concat, dcombined) } else { combine.input_grad(dcombined) };
    let mut table_grad = table_grad;
    for (m, w) in level_w.iter_mut().enumerate() {
        if cache.means[m].is_empty() {
            continue;
        }
        let dpre: Vec<f64> = (0..d).map(|k| if cache.pre[m][k] > 0.0 { dconcat[m * d + k] } else { 0.0 }).collect();
        if train_weights {
            w.grad.add_outer(1.0, &dpre, &cache.means[m]);
        }
        if let Some(tg) = table_grad.as_deref_mut() {
            let dmean = w.value.tr_mul_vec(&dpre);
            let kept: Vec<usize> = neighbors[m].iter().copied().filter(|&j| Some(j) != skip).collect();
            let inv = 1.0 / kept.len() as f64;
            for j in kept {
                axpy(inv, &dmean, tg.row_mut(j));
            }
        }
    }
}

impl Parameterized for Predictor {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        match self {
            Predictor::Dot => {}
            Predictor::Nn(nn) => nn.mlp.visit_params(f),
            Predictor::Gc(gc) => {
                gc.user_level.iter().for_each(|p| f(p));
                gc.item_level.iter().for_each(|p| f(p));
                gc.user_combine.visit_params(f);
                gc.item_combine.visit_params(f);
                gc.mlp.visit_params(f);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        match self {
            Predictor::Dot => {}
            Predictor::Nn(nn) => nn.mlp.visit_params_mut(f),
            Predictor::Gc(gc) => {
                gc.user_level.iter_mut().for_each(|p| f(p));
                gc.item_level.iter_mut().for_each(|p| f(p));
                gc.user_combine.visit_params_mut(f);
                gc.item_combine.visit_params_mut(f);
                gc.mlp.visit_params_mut(f);
            }
        }
    }
}
