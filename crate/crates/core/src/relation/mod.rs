//! Stage two: multi-head attention over key users that produces embeddings
//! for users outside the factorization.

mod adapt;
mod attention;
mod context;
mod contrastive;

pub use adapt::{
    adapt, user_ratings, AdaptConfig, AdaptMode, AdaptReport, AttentionRow, BatchLoss, InductiveModel, InductiveUser, InferredUser,
};
pub use attention::{
    AttentionHead, AttentionWeights, Normalization, RelationInit, RelationParams, ScoreActivation, LEAKY_SLOPE, LINEAR_RATIO_EPSILON,
};
pub use context::{build_context, UserContext, DEFAULT_FALLBACK_SIZE};
pub use contrastive::{contrastive_loss, contrastive_loss_grad, ContrastiveSign};
