use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RatingDataset, SplitIndices};
use crate::error::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Key users have strictly more than `delta` training ratings.
    Threshold { delta: usize },
    /// A seeded uniform sample of `ceil(gamma * M)` users become key users.
    Random { gamma: f64, seed: u64 },
}

/// Key users (meta-latent basis) and query users, both sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserPartition {
    pub key_users: Vec<usize>,
    pub query_users: Vec<usize>,
    pub strategy: PartitionStrategy,
}

impl UserPartition {
    /// Every user is a key user; used for the transductive baseline.
    pub fn all_key(num_users: usize) -> Self {
        UserPartition { key_users: (0..num_users).collect(), query_users: Vec::new(), strategy: PartitionStrategy::Threshold { delta: 0 } }
    }

    pub fn is_key(&self, user: usize) -> bool {
        self.key_users.binary_search(&user).is_ok()
    }

    pub fn is_query(&self, user: usize) -> bool {
        self.query_users.binary_search(&user).is_ok()
    }
}

pub fn partition_users(ds: &RatingDataset, split: &SplitIndices, strategy: &PartitionStrategy) -> Result<UserPartition, ConfigError> {
    let (key_users, query_users) = match *strategy {
        PartitionStrategy::Threshold { delta } => {
            let mut counts = vec![0usize; ds.num_users];
            for &k in &split.train {
                counts[ds.ratings[k].user] += 1;
            }
            (0..ds.num_users).partition(|&u| counts[u] > delta)
        }
        PartitionStrategy::Random { gamma, seed } => {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(ConfigError::invalid("split.gamma", format!("{gamma} not in (0, 1)")));
            }
            let n_key = (gamma * ds.num_users as f64).ceil() as usize;
            if n_key == 0 || n_key >= ds.num_users {
                return Err(ConfigError::invalid("split.gamma", format!("gamma {gamma} leaves an empty key or query set")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut is_key = vec![false; ds.num_users];
            for u in sample(&mut rng, ds.num_users, n_key) {
                is_key[u] = true;
            }
            (0..ds.num_users).partition(|&u| is_key[u])
        }
    };
    Ok(UserPartition { key_users, query_users, strategy: strategy.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{holdout_split, Feedback, Rating};
    use proptest::prelude::*;

    fn ds_with_counts(counts: &[usize]) -> (RatingDataset, SplitIndices) {
        let mut ratings = Vec::new();
        for (u, &c) in counts.iter().enumerate() {
            for i in 0..c {
                ratings.push(Rating { user: u, item: i, value: 4.0, timestamp: None });
            }
        }
        let n_items = counts.iter().copied().max().unwrap_or(0);
        let ds = RatingDataset::from_triples(counts.len(), n_items, ratings, Feedback::Explicit).unwrap();
        let split = SplitIndices { train: (0..ds.len()).collect(), ..Default::default() };
        (ds, split)
    }

    #[test]
    fn threshold_zero_keeps_every_user_with_a_rating() {
        let (ds, split) = ds_with_counts(&[0, 1, 3, 0, 2]);
        let p = partition_users(&ds, &split, &PartitionStrategy::Threshold { delta: 0 }).unwrap();
        assert_eq!(p.key_users, vec![1, 2, 4]);
        assert_eq!(p.query_users, vec![0, 3]);
    }

    #[test]
    fn threshold_is_strict() {
        let (ds, split) = ds_with_counts(&[2, 3, 4]);
        let p = partition_users(&ds, &split, &PartitionStrategy::Threshold { delta: 3 }).unwrap();
        assert_eq!(p.key_users, vec![2]);
    }

    #[test]
    fn random_partition_is_seeded() {
        let (ds, split) = ds_with_counts(&[1; 40]);
        let s = PartitionStrategy::Random { gamma: 0.5, seed: 4 };
        let a = partition_users(&ds, &split, &s).unwrap();
        assert_eq!(a, partition_users(&ds, &split, &s).unwrap());
        assert_eq!(a.key_users.len(), 20);
    }

    #[test]
    fn degenerate_gamma_rejected() {
        let (ds, split) = ds_with_counts(&[1; 3]);
        assert!(partition_users(&ds, &split, &PartitionStrategy::Random { gamma: 0.99, seed: 1 }).is_err());
        assert!(partition_users(&ds, &split, &PartitionStrategy::Random { gamma: 0.0, seed: 1 }).is_err());
    }

    proptest! {
        #[test]
        fn threshold_invariant(counts in proptest::collection::vec(0usize..12, 1..30), delta in 0usize..10, seed in any::<u64>()) {
            let (ds, _) = ds_with_counts(&counts);
            prop_assume!(ds.len() >= 2);
            let split = holdout_split(&ds, 0.3, seed).unwrap();
            let p = partition_users(&ds, &split, &PartitionStrategy::Threshold { delta }).unwrap();
            let mut train_counts = vec![0usize; ds.num_users];
            for &k in &split.train { train_counts[ds.ratings[k].user] += 1; }
            for &u in &p.key_users { prop_assert!(train_counts[u] > delta); }
            for &u in &p.query_users { prop_assert!(train_counts[u] <= delta); }
            prop_assert_eq!(p.key_users.len() + p.query_users.len(), ds.num_users);
        }
    }
}
