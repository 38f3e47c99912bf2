use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::numerics::{axpy, Matrix};

/// Items sampled for a user without history.
pub const DEFAULT_FALLBACK_SIZE: usize = 10;

/// Aggregated rated-item vector `d_u = Σ_{i ∈ history} q_i` of one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserContext {
    pub vector: Vec<f64>,
    /// Distinct items summed, ascending.
    pub history: Vec<usize>,
    /// The history was empty and `history` holds randomly drawn items.
    pub fallback_used: bool,
}

/// Sums item embeddings over `history` in ascending item order. An empty
/// history is replaced by `fallback_size` items drawn uniformly with `seed`.
pub fn build_context(history: &[usize], q: &Matrix, seed: u64, fallback_size: usize) -> Result<UserContext, ModelError> {
    let n = q.rows();
    let mut items = history.to_vec();
    items.sort_unstable();
    items.dedup();
    if let Some(&bad) = items.iter().find(|&&i| i >= n) {
        return Err(ModelError::OutOfRange { kind: "item", index: bad, size: n });
    }
    let fallback_used = items.is_empty();
    if fallback_used {
        if fallback_size == 0 || n == 0 {
            return Err(ModelError::ColdStart);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        items = sample(&mut rng, n, fallback_size.min(n)).into_vec();
        items.sort_unstable();
    }
    let mut vector = vec![0.0; q.cols()];
    for &i in &items {
        axpy(1.0, q.row(i), &mut vector);
    }
    Ok(UserContext { vector, history: items, fallback_used })
}
