use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Feedback, Rating, RatingDataset};
use crate::error::DataError;

/// Negatives drawn per positive interaction in evaluation.
pub const DEFAULT_NEGATIVE_RATIO: usize = 5;

/// Appends `ratio` uniformly drawn non-interacted items (label 0) per positive.
///
/// Draws that hit one of the user's positives are resampled. Negatives for the
/// same user may repeat, so the result can contain duplicate zero-labelled
/// pairs; it never contains a zero-labelled copy of a positive pair.
pub fn negative_sample(ds: &RatingDataset, ratio: usize, seed: u64) -> Result<RatingDataset, DataError> {
    if ds.feedback != Feedback::Implicit {
        return Err(DataError::Invalid("negative sampling requires implicit feedback".into()));
    }
    let all: Vec<usize> = (0..ds.ratings.len()).collect();
    let mut out = ds.clone();
    out.ratings.extend(sample_negatives(ds, &all, ratio, seed));
    Ok(out)
}

/// `ratio` zero-labelled items per positive among `ds.ratings[indices]`, never
/// hitting anything the user interacted with anywhere in `ds`.
pub fn sample_negatives(ds: &RatingDataset, indices: &[usize], ratio: usize, seed: u64) -> Vec<Rating> {
    let mut out = Vec::new();
    if ratio == 0 {
        return out;
    }
    let mut positives: Vec<HashSet<usize>> = vec![HashSet::new(); ds.num_users];
    for r in ds.ratings.iter().filter(|r| r.value > 0.0) {
        positives[r.user].insert(r.item);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warned = vec![false; ds.num_users];
    for r in indices.iter().map(|&k| &ds.ratings[k]).filter(|r| r.value > 0.0) {
        let seen = &positives[r.user];
        if seen.len() >= ds.num_items {
            if !warned[r.user] {
                log::warn!("user {} has interacted with every item; no negatives sampled", r.user);
                warned[r.user] = true;
            }
            continue;
        }
        for _ in 0..ratio {
            let item = loop {
                let candidate = rng.random_range(0..ds.num_items);
                if !seen.contains(&candidate) {
                    break candidate;
                }
            };
            out.push(Rating { user: r.user, item, value: 0.0, timestamp: None });
        }
    }
    out
}
