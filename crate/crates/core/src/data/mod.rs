//! Rating ingestion, splits, key/query partitions, negative sampling and
//! synthetic low-rank instances.

mod dataset;
mod negative;
mod partition;
mod split;
mod synth;

pub use dataset::{load_movielens, load_ratings, DataFormat, Feedback, Rating, RatingDataset};
pub use negative::{negative_sample, sample_negatives, DEFAULT_NEGATIVE_RATIO};
pub use partition::{partition_users, PartitionStrategy, UserPartition};
pub use split::{holdout_split, leading_split, SplitIndices, VALIDATION_FRACTION};
pub use synth::{synth_low_rank, TrueFactors};
