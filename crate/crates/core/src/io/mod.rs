//! Point cloud, label, score and prediction file formats, plus synthetic data.

mod augment;
mod cloud;
mod labels;
mod scores;
mod synth;

pub use augment::{augment_cloud, AugmentParams};
pub use cloud::{read_point_cloud, write_point_cloud, Point, PointCloud};
pub use labels::{read_labels, read_predictions, write_labels, write_predictions, LabelVector, RemapTable};
pub use scores::{argmax, read_scores, write_scores, ScoreMatrix, SCORES_MAGIC, SCORES_VERSION};
pub use synth::{generate_synthetic_scene, synthetic_scorer, Confusion, Primitive, SceneConfig, ScorerProfile};
