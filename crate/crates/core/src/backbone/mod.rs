//! Configurable small CNN with a tap before every max-pool, plus its two training phases.

pub mod augment;
pub mod network;
pub mod params;
pub mod spec;
pub mod train;

pub use augment::{augment, AugmentConfig, Transform};
pub use network::{
    argmax_rows, backward, concat_features, forward, forward_traced, head_features, predict, predict_backbone,
    BackwardOptions, ForwardOutput, Gradients, Trace,
};
pub use params::{build_model, HeadWeights, Parameters};
pub use spec::{ConvSpec, ModelSpec, StageSpec, Tap, TapSet};
pub use train::{extract_head_features, train_backbone, train_gap_head, HeadInit, TrainConfig, TrainLog};
