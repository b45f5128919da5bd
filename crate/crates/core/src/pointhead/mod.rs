//! The refinement network applied to points the two views disagree on.

mod model;
mod train;

pub use model::{HeadGradients, HeadSample, PointHeadModel, DEFAULT_WIDTHS};
pub(crate) use train::predict_with_tree;
pub use train::{
    assemble_samples, class_weights, derive_seed, loss_trace_csv, predict_uncertain, train_point_head,
    training_candidates, ClassWeighting, EpochStats, HeadTrainConfig, ScanData, TrainOutput,
};
