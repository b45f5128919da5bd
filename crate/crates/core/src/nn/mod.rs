//! Small neural-network toolkit in f64 with explicit backward passes.

mod checkpoint;
mod dense;
pub mod gradcheck;
mod gru;
mod ops;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::DenseLayer;
pub(crate) use dense::{accumulate_backward, dot};
pub use gradcheck::{finite_difference_grad, max_relative_error};
pub use gru::{
    gru_cell, gru_cell_backward, gru_feature_map, gru_feature_map_backward, sequence_cells, stack_cells, FeatureMap,
    GruCache, GruCellParams,
};
pub use ops::{
    dice_loss, relu, relu_backward, set_maxpool, set_maxpool_backward, softmax, softmax_ce, DICE_EPSILON,
};
pub use optim::{one_cycle_lr, sgd_step, OneCycle, TrainState};
