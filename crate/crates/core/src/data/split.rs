use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RatingDataset;
use crate::error::ConfigError;

/// Share of the training ratings moved to validation for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.05;

/// Disjoint index sets into `RatingDataset::ratings`, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Global uniform random train/test split, then 5% of train to validation.
pub fn holdout_split(ds: &RatingDataset, test_fraction: f64, seed: u64) -> Result<SplitIndices, ConfigError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ConfigError::invalid("split.test_fraction", format!("{test_fraction} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_test = (ds.len() as f64 * test_fraction).round() as usize;
    let test = order[..n_test].to_vec();
    let train = order[n_test..].to_vec();
    Ok(carve_validation(train, test))
}

/// The first `test_count` ratings in file order form the test set.
///
/// Applied to MovieLens-100K `u.data` with 20,000 this reproduces the
/// distribution's own `u1.base`/`u1.test` split.
pub fn leading_split(ds: &RatingDataset, test_count: usize, seed: u64) -> Result<SplitIndices, ConfigError> {
    if test_count == 0 || test_count >= ds.len() {
        return Err(ConfigError::invalid("split.test_count", format!("{test_count} must be in [1, {})", ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test: Vec<usize> = (0..test_count).collect();
    let mut train: Vec<usize> = (test_count..ds.len()).collect();
    train.shuffle(&mut rng);
    Ok(carve_validation(train, test))
}

fn carve_validation(shuffled_train: Vec<usize>, test: Vec<usize>) -> SplitIndices {
    let n_val = (shuffled_train.len() as f64 * VALIDATION_FRACTION).round() as usize;
    let mut validation = shuffled_train[..n_val].to_vec();
    let mut train = shuffled_train[n_val..].to_vec();
    let mut test = test;
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    SplitIndices { train, validation, test }
}
