//! Final label assembly: the point head decides uncertain points, a
//! geometric-mean ensemble decides the rest.

use crate::assertion::{uncertainty_mask, UncertaintyMask};
use crate::error::{Error, Result};
use crate::io::{argmax, LabelVector, PointCloud, ScoreMatrix};
use crate::neighborhood::KdTree;
use crate::pointhead::{predict_with_tree, PointHeadModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Source {
    Ensemble = 0,
    Head = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub labels: LabelVector,
    pub source: Vec<Source>,
    /// Geometric-mean scores for every point; only meaningful where `source` is `Ensemble`.
    pub combined_scores: Option<ScoreMatrix>,
    pub mask: UncertaintyMask,
}

impl FusionResult {
    /// One byte per point: 0 for ensemble, 1 for point head.
    pub fn source_bytes(&self) -> Vec<u8> {
        self.source.iter().map(|&s| s as u8).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    Geometric,
    Arithmetic,
    Max,
}

fn combine_rows(f: &ScoreMatrix, g: &ScoreMatrix, op: impl Fn(f64, f64) -> f64) -> Result<ScoreMatrix> {
    f.check_same_shape(g)?;
    let k = f.num_classes();
    let mut data = Vec::with_capacity(f.rows() * k);
    for (a, b) in f.iter_rows().zip(g.iter_rows()) {
        let start = data.len();
        data.extend(a.iter().zip(b).map(|(&x, &y)| op(x, y)));
        let row = &mut data[start..];
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        } else {
            // disjoint supports; argmax falls to class 0 either way
            row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
    }
    Ok(ScoreMatrix::from_normalized(f.rows(), k, data))
}

/// Elementwise `sqrt(f·g)`, renormalized per row.
pub fn combine_geometric(f: &ScoreMatrix, g: &ScoreMatrix) -> Result<ScoreMatrix> {
    combine_rows(f, g, |a, b| (a * b).sqrt())
}

pub fn combine_arithmetic(f: &ScoreMatrix, g: &ScoreMatrix) -> Result<ScoreMatrix> {
    combine_rows(f, g, |a, b| 0.5 * (a + b))
}

pub fn combine_max(f: &ScoreMatrix, g: &ScoreMatrix) -> Result<ScoreMatrix> {
    combine_rows(f, g, f64::max)
}

pub fn combine(f: &ScoreMatrix, g: &ScoreMatrix, how: Combiner) -> Result<ScoreMatrix> {
    match how {
        Combiner::Geometric => combine_geometric(f, g),
        Combiner::Arithmetic => combine_arithmetic(f, g),
        Combiner::Max => combine_max(f, g),
    }
}

/// Argmax labels of a combined ensemble.
pub fn ensemble_labels(f: &ScoreMatrix, g: &ScoreMatrix, how: Combiner) -> Result<LabelVector> {
    let combined = combine(f, g, how)?;
    LabelVector::new(combined.argmax(), f.num_classes())
}

pub fn fuse_predictions(
    cloud: &PointCloud,
    f: &ScoreMatrix,
    g: &ScoreMatrix,
    tau: f64,
    model: &PointHeadModel,
) -> Result<FusionResult> {
    let mask = uncertainty_mask(f, g, tau)?;
    fuse_with_mask(cloud, f, g, mask, model)
}

pub fn fuse_with_mask(
    cloud: &PointCloud,
    f: &ScoreMatrix,
    g: &ScoreMatrix,
    mask: UncertaintyMask,
    model: &PointHeadModel,
) -> Result<FusionResult> {
    f.check_same_shape(g)?;
    if f.rows() != cloud.len() || mask.len() != cloud.len() {
        return Err(Error::shape("cloud, scores and mask lengths differ"));
    }
    if f.num_classes() != model.num_classes {
        return Err(Error::shape(format!(
            "scores have {} classes, model {}",
            f.num_classes(),
            model.num_classes
        )));
    }
    let combined = combine_geometric(f, g)?;
    let mut labels: Vec<u32> = combined.iter_rows().map(argmax).collect();
    let mut source = vec![Source::Ensemble; cloud.len()];

    let uncertain = mask.uncertain_indices();
    if !uncertain.is_empty() {
        if model.neighbors > cloud.len() {
            return Err(Error::invalid(format!("{} neighbors requested from {} points", model.neighbors, cloud.len())));
        }
        let tree = KdTree::build(cloud)?;
        for (i, label) in predict_with_tree(model, &tree, cloud, f, g, &uncertain)? {
            labels[i] = label;
            source[i] = Source::Head;
        }
    }
    Ok(FusionResult {
        labels: LabelVector::new(labels, f.num_classes())?,
        source,
        combined_scores: Some(combined),
        mask,
    })
}
