use serde::{Deserialize, Serialize};

use super::kdtree::Neighbor;
use crate::error::{Error, Result};
use crate::io::{PointCloud, ScoreMatrix};

/// Encoding of the query-to-neighbor relation in each set row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// `(dx, dy, dz, |d|)`
    #[default]
    VectorNorm,
    /// `|d|` alone.
    NormOnly,
}

impl PhiMode {
    pub fn arity(self) -> usize {
        match self {
            PhiMode::VectorNorm => 4,
            PhiMode::NormOnly => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    #[serde(default)]
    pub phi: PhiMode,
    /// Multiplier applied to coordinates and offsets; 1.0 feeds raw meters.
    #[serde(default = "unit")]
    pub coord_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self { phi: PhiMode::VectorNorm, coord_scale: 1.0 }
    }
}

impl FeatureOptions {
    pub fn point_width(&self, num_classes: usize) -> usize {
        2 * num_classes + 4
    }

    pub fn set_width(&self, num_classes: usize) -> usize {
        2 * num_classes + self.phi.arity()
    }
}

/// `[f_i | g_i | x, y, z, intensity]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures(pub Vec<f64>);

/// One row per neighbor: `[f_k | g_k | phi(x_i, x_k)]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SetFeatures {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SetFeatures {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn check_inputs(i: usize, f: &ScoreMatrix, g: &ScoreMatrix, cloud: &PointCloud) -> Result<()> {
    f.check_same_shape(g)?;
    if f.rows() != cloud.len() {
        return Err(Error::shape(format!("{} score rows for {} points", f.rows(), cloud.len())));
    }
    if i >= cloud.len() {
        return Err(Error::IndexOutOfRange { index: i, len: cloud.len() });
    }
    Ok(())
}

pub fn assemble_point_features(
    i: usize,
    f: &ScoreMatrix,
    g: &ScoreMatrix,
    cloud: &PointCloud,
    opts: &FeatureOptions,
) -> Result<PointFeatures> {
    check_inputs(i, f, g, cloud)?;
    let p = &cloud.points[i];
    let s = opts.coord_scale;
    let mut v = Vec::with_capacity(opts.point_width(f.num_classes()));
    v.extend_from_slice(f.row(i));
    v.extend_from_slice(g.row(i));
    v.extend_from_slice(&[p.x * s, p.y * s, p.z * s, p.intensity]);
    Ok(PointFeatures(v))
}

pub fn assemble_set_features(
    i: usize,
    neighbors: &[Neighbor],
    f: &ScoreMatrix,
    g: &ScoreMatrix,
    cloud: &PointCloud,
    opts: &FeatureOptions,
) -> Result<SetFeatures> {
    check_inputs(i, f, g, cloud)?;
    let cols = opts.set_width(f.num_classes());
    let q = &cloud.points[i];
    let s = opts.coord_scale;
    let mut data = Vec::with_capacity(neighbors.len() * cols);
    for nb in neighbors {
        let k = nb.index;
        if k >= cloud.len() {
            return Err(Error::IndexOutOfRange { index: k, len: cloud.len() });
        }
        let p = &cloud.points[k];
        let d = [(p.x - q.x) * s, (p.y - q.y) * s, (p.z - q.z) * s];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        data.extend_from_slice(f.row(k));
        data.extend_from_slice(g.row(k));
        match opts.phi {
            PhiMode::VectorNorm => data.extend_from_slice(&[d[0], d[1], d[2], norm]),
            PhiMode::NormOnly => data.push(norm),
        }
    }
    Ok(SetFeatures { rows: neighbors.len(), cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Point;
    use crate::neighborhood::KdTree;

    fn fixture() -> (PointCloud, ScoreMatrix, ScoreMatrix) {
        let cloud = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.5), Point::new(4.0, 6.0, 3.0, 0.1)]);
        let f = ScoreMatrix::from_rows(&[vec![0.7, 0.3], vec![0.1, 0.9]]).unwrap();
        let g = ScoreMatrix::from_rows(&[vec![0.4, 0.6], vec![0.2, 0.8]]).unwrap();
        (cloud, f, g)
    }

    #[test]
    fn point_features_concatenate() {
        let (cloud, f, g) = fixture();
        let p = assemble_point_features(0, &f, &g, &cloud, &FeatureOptions::default()).unwrap();
        assert_eq!(p.0, vec![0.7, 0.3, 0.4, 0.6, 1.0, 2.0, 3.0, 0.5]);
        assert!(assemble_point_features(2, &f, &g, &cloud, &FeatureOptions::default()).is_err());
        assert_eq!(FeatureOptions::default().point_width(19), 42);
    }

    #[test]
    fn set_rows_carry_offsets() {
        let (cloud, f, g) = fixture();
        let tree = KdTree::build(&cloud).unwrap();
        let nn = tree.knn_query(0, 2).unwrap();
        let s = assemble_set_features(0, &nn, &f, &g, &cloud, &FeatureOptions::default()).unwrap();
        assert_eq!((s.rows, s.cols), (2, 8));
        assert_eq!(&s.row(0)[4..], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.row(1), &[0.1, 0.9, 0.2, 0.8, 3.0, 4.0, 0.0, 5.0]);

        let norm_only = FeatureOptions { phi: PhiMode::NormOnly, ..Default::default() };
        let s = assemble_set_features(0, &nn, &f, &g, &cloud, &norm_only).unwrap();
        assert_eq!(s.row(1), &[0.1, 0.9, 0.2, 0.8, 5.0]);

        let bogus = [Neighbor { index: 9, distance: 0.0 }];
        assert!(assemble_set_features(0, &bogus, &f, &g, &cloud, &FeatureOptions::default()).is_err());
    }
}
