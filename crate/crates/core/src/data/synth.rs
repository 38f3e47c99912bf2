use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Feedback, Rating, RatingDataset};
use crate::error::ConfigError;
use crate::numerics::{dot, Matrix};

/// Ground truth behind a synthetic dataset: observed values equal
/// `scale * (p_u · q_i + noise) + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueFactors {
    pub users: Matrix,
    pub items: Matrix,
    pub scale: f64,
    pub offset: f64,
}

impl TrueFactors {
    /// Noise-free value for `(u, i)` on the rating scale.
    pub fn value(&self, u: usize, i: usize) -> f64 {
        self.scale * dot(self.users.row(u), self.items.row(i)) + self.offset
    }
}

/// Random rank-`rank` ratings with entries `N(0, 1) / sqrt(rank)` in both
/// factors, each cell observed independently with probability `density`, and
/// observed values affinely mapped onto `[1, 5]`.
pub fn synth_low_rank(
    num_users: usize,
    num_items: usize,
    rank: usize,
    density: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(RatingDataset, TrueFactors), ConfigError> {
    if rank == 0 || rank > num_users.min(num_items) {
        return Err(ConfigError::invalid("synth.rank", format!("rank {rank} must be in [1, min(M, N)]")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(ConfigError::invalid("synth.density", format!("{density} not in (0, 1]")));
    }
    if !(noise_sd >= 0.0) {
        return Err(ConfigError::invalid("synth.noise_sd", "must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (rank as f64).sqrt();
    let mut draw = |n: usize| -> Matrix {
        let data = (0..n * rank).map(|_| StandardNormal.sample(&mut rng)).map(|z: f64| z * scale).collect();
        Matrix::from_vec(n, rank, data).expect("shape")
    };
    let users = draw(num_users);
    let items = draw(num_items);
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("non-negative sd");

    let mut raw = Vec::new();
    for u in 0..num_users {
        for i in 0..num_items {
            if rng.random::<f64>() < density {
                let mut x = dot(users.row(u), items.row(i));
                if noise_sd > 0.0 {
                    x += noise.sample(&mut rng);
                }
                raw.push((u, i, x));
            }
        }
    }
    let lo = raw.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = if raw.is_empty() || hi - lo < 1e-12 { (0.0, 3.0) } else { (4.0 / (hi - lo), 1.0 - 4.0 * lo / (hi - lo)) };
    let ratings = raw
        .into_iter()
        .map(|(user, item, x)| Rating { user, item, value: (a * x + b).clamp(1.0, 5.0), timestamp: None })
        .collect();
    let ds = RatingDataset::from_triples(num_users, num_items, ratings, Feedback::Explicit).expect("synthetic data is valid");
    Ok((ds, TrueFactors { users, items, scale: a, offset: b }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::symmetric_eigen;

    #[test]
    fn noiseless_dense_matrix_is_rank_d_after_removing_offset() {
        let (ds, truth) = synth_low_rank(12, 9, 3, 1.0, 0.0, 2).unwrap();
        assert_eq!(ds.len(), 12 * 9);
        let mut centered = Matrix::zeros(12, 9);
        for r in &ds.ratings {
            centered.set(r.user, r.item, (r.value - truth.offset) / truth.scale);
        }
        // eigenvalues of the 9x9 Gram matrix: at most `rank` are non-negligible
        let gram = crate::numerics::matmul(&centered.transpose(), &centered).unwrap();
        let (vals, _) = symmetric_eigen(&gram);
        let top = vals.iter().cloned().fold(0.0, f64::max);
        let significant = vals.iter().filter(|&&v| v > 1e-9 * top).count();
        assert!(significant <= 3, "{vals:?}");
        for r in &ds.ratings {
            assert!((truth.value(r.user, r.item) - r.value).abs() < 1e-12);
        }
    }

    #[test]
    fn observation_count_matches_binomial_mean() {
        let (ds, _) = synth_low_rank(50, 40, 8, 0.3, 0.0, 7).unwrap();
        let n = 2000.0;
        let mean = n * 0.3;
        let sd = (n * 0.3 * 0.7f64).sqrt();
        assert!(((ds.len() as f64) - mean).abs() < 4.0 * sd, "{} observed", ds.len());
    }

    #[test]
    fn seeded() {
        assert_eq!(synth_low_rank(20, 15, 4, 0.5, 0.1, 3).unwrap(), synth_low_rank(20, 15, 4, 0.5, 0.1, 3).unwrap());
    }

    #[test]
    fn values_span_rating_scale() {
        let (ds, _) = synth_low_rank(30, 30, 5, 0.5, 0.2, 1).unwrap();
        let lo = ds.ratings.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
        let hi = ds.ratings.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_arguments() {
        assert!(synth_low_rank(5, 5, 6, 0.5, 0.0, 1).is_err());
        assert!(synth_low_rank(5, 5, 2, 0.0, 0.0, 1).is_err());
    }
}
