//! Exact neighbor search and the per-point / per-neighborhood feature rows
//! consumed by the point head.

mod features;
mod kdtree;

pub use features::{
    assemble_point_features, assemble_set_features, FeatureOptions, PhiMode, PointFeatures, SetFeatures,
};
pub use kdtree::{brute_force_knn, KdTree, Neighbor};
