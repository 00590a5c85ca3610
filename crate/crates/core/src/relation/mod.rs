//! Proposal relation module: every proposal of a video is pooled into a
//! fixed-size vector, a single self-attention layer mixes information
//! across the proposal set, and a small MLP predicts a refined confidence.

mod attention;
mod feature;
mod rescore;
mod train;

pub use attention::{attention_backward, attention_forward, Activation, ForwardCache, RelationGrads, RelationWeights};
pub use feature::{pool_proposal_feature, proposal_features, PoolConfig};
pub use rescore::{combine_scores, rescore_proposals, CombineMode};
pub use train::{dataset_mse, train_relation, BatchOrder, RelationSample, TrainConfig, TrainOutcome};
