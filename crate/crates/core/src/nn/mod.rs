//! Dense feed-forward networks with exact backprop, AdamW training and the
//! joint supervised/outage loss.

pub mod loss;
pub mod mlp;
pub mod normalize;
pub mod train;

pub use loss::{loss_joint, LossValue, LossWeights, OutageModel, Pieces};
pub use mlp::{
    init_bound, Gradients, HeadKind, HeadSpec, LastInputProbe, Layer, MlpModel, MlpSpec, Trace,
    MODEL_FILE_VERSION,
};
pub use normalize::Normalizer;
pub use train::{max_min_normalize, train, Adam, EpochStats, Objective, TrainConfig, TrainReport};

/// Hidden widths `[8, 8, 8, 4, 4] × n_users`.
pub fn hidden_layers(n_users: usize) -> Vec<usize> {
    [8, 8, 8, 4, 4].iter().map(|m| m * n_users.max(1)).collect()
}
