//! Range-view and polar bird's-eye-view projections.
//!
//! Each projection maps points to grid cells and elects one representative
//! per cell: the in-bounds point closest to the sensor, lowest index on ties.
//! Scores move between points and cells through [`scatter_point_scores_to_cells`]
//! and [`gather_cell_scores_to_points`].

use std::f64::consts::{PI, TAU};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{PointCloud, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RvMode {
    /// Rows from elevation angle between `fov_down` and `fov_up`.
    Spherical,
    /// Rows from height between `z_min` and `z_max`.
    Cylindrical { z_min: f64, z_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvConfig {
    pub height: usize,
    pub width: usize,
    #[serde(flatten)]
    pub mode: RvMode,
    /// Radians, upward positive.
    pub fov_up: f64,
    /// Radians, signed; downward negative.
    pub fov_down: f64,
}

impl RvConfig {
    pub fn spherical(height: usize, width: usize, fov_up: f64, fov_down: f64) -> Self {
        Self { height, width, mode: RvMode::Spherical, fov_up, fov_down }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 1 || self.width < 2 {
            return Err(Error::invalid("range image needs height >= 1 and width >= 2"));
        }
        match self.mode {
            RvMode::Spherical if !(self.fov_up > self.fov_down) => {
                Err(Error::invalid("fov_up must exceed fov_down"))
            }
            RvMode::Cylindrical { z_min, z_max } if !(z_max > z_min) => {
                Err(Error::invalid("cylindrical z_max must exceed z_min"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevConfig {
    pub r_bins: usize,
    pub theta_bins: usize,
    pub z_bins: usize,
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self { r_bins: 480, theta_bins: 360, z_bins: 32, r_max: 50.0, z_min: -3.0, z_max: 1.5 }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_bins < 1 || self.theta_bins < 1 || self.z_bins < 1 {
            return Err(Error::invalid("BEV bin counts must be at least 1"));
        }
        if !(self.r_max > 0.0) || !(self.z_max > self.z_min) {
            return Err(Error::invalid("BEV grid needs r_max > 0 and z_max > z_min"));
        }
        Ok(())
    }
}

/// Point-to-cell assignment for a 2-D grid of `dims[0] × dims[1]` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionIndex {
    pub dims: [usize; 2],
    /// `(row, col)` or `(r_bin, theta_bin)`; `None` when out of bounds.
    pub point_to_cell: Vec<Option<[usize; 2]>>,
    /// Flat row-major cell index to representative point.
    pub cell_representative: Vec<Option<usize>>,
    /// Height bin per point, BEV only. Meaningless for out-of-bounds points.
    pub z_bin: Option<Vec<usize>>,
}

impl ProjectionIndex {
    fn build(dims: [usize; 2], point_to_cell: Vec<Option<[usize; 2]>>, cloud: &PointCloud) -> Self {
        let mut cell_representative: Vec<Option<usize>> = vec![None; dims[0] * dims[1]];
        for (i, cell) in point_to_cell.iter().enumerate() {
            let Some([a, b]) = *cell else { continue };
            let slot = &mut cell_representative[a * dims[1] + b];
            match *slot {
                // strict comparison keeps the lowest index on equal range
                Some(j) if cloud.points[j].range() <= cloud.points[i].range() => {}
                _ => *slot = Some(i),
            }
        }
        Self { dims, point_to_cell, cell_representative, z_bin: None }
    }

    pub fn num_cells(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn flat_cell(&self, point: usize) -> Option<usize> {
        self.point_to_cell[point].map(|[a, b]| a * self.dims[1] + b)
    }

    pub fn in_bounds(&self) -> Vec<bool> {
        self.point_to_cell.iter().map(Option::is_some).collect()
    }

    pub fn occupied_cells(&self) -> usize {
        self.cell_representative.iter().filter(|c| c.is_some()).count()
    }
}

/// Column shared by both range-view modes; yaw 0 lands at the image center.
pub fn rv_column(x: f64, y: f64, width: usize) -> usize {
    let yaw = y.atan2(x);
    let col = (0.5 * (1.0 - yaw / PI) * width as f64).floor();
    col.clamp(0.0, (width - 1) as f64) as usize
}

fn clamp_row(v: f64, height: usize) -> usize {
    v.floor().clamp(0.0, (height - 1) as f64) as usize
}

/// `(row, col)` for one point, `None` for a point at the sensor origin.
pub fn rv_cell(x: f64, y: f64, z: f64, config: &RvConfig) -> Option<[usize; 2]> {
    let range = (x * x + y * y + z * z).sqrt();
    if range == 0.0 {
        return None;
    }
    let h = config.height as f64;
    let row = match config.mode {
        RvMode::Spherical => {
            let pitch = (z / range).asin();
            (1.0 - (pitch - config.fov_down) / (config.fov_up - config.fov_down)) * h
        }
        RvMode::Cylindrical { z_min, z_max } => (1.0 - (z - z_min) / (z_max - z_min)) * h,
    };
    Some([clamp_row(row, config.height), rv_column(x, y, config.width)])
}

/// `height × width × 6` image with channels x, y, z, intensity, range, mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RangeImage {
    pub const CHANNELS: usize = 6;

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * Self::CHANNELS;
        &self.data[o..o + Self::CHANNELS]
    }

    pub fn mask_count(&self) -> usize {
        self.data.chunks_exact(Self::CHANNELS).filter(|px| px[5] == 1.0).count()
    }

    /// `"AMVI"`, then H, W, C as little-endian u32, then H·W·C float32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(b"AMVI");
        for v in [self.height, self.width, Self::CHANNELS] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let mut buf = [0u8; 4];
        for &v in &self.data {
            LittleEndian::write_f32(&mut buf, v as f32);
            out.extend_from_slice(&buf);
        }
        out
    }
}

pub fn project_rv(cloud: &PointCloud, config: &RvConfig) -> Result<(ProjectionIndex, RangeImage)> {
    config.validate()?;
    cloud.require_non_empty()?;
    let cells = cloud.points.iter().map(|p| rv_cell(p.x, p.y, p.z, config)).collect();
    let index = ProjectionIndex::build([config.height, config.width], cells, cloud);
    if index.occupied_cells() == 0 {
        return Err(Error::Empty("every point projects out of bounds"));
    }

    let mut data = vec![0.0; config.height * config.width * RangeImage::CHANNELS];
    for (cell, rep) in index.cell_representative.iter().enumerate() {
        if let Some(i) = *rep {
            let p = &cloud.points[i];
            let o = cell * RangeImage::CHANNELS;
            data[o..o + RangeImage::CHANNELS].copy_from_slice(&[p.x, p.y, p.z, p.intensity, p.range(), 1.0]);
        }
    }
    Ok((index, RangeImage { height: config.height, width: config.width, data }))
}

/// Polar pillar bins `(r_bin, theta_bin, z_bin)`, `None` outside the grid.
pub fn bev_cell(x: f64, y: f64, z: f64, config: &BevConfig) -> Option<[usize; 3]> {
    let r = (x * x + y * y).sqrt();
    if r >= config.r_max || z < config.z_min || z >= config.z_max {
        return None;
    }
    let mut theta = y.atan2(x);
    if theta < 0.0 {
        theta += TAU;
    }
    let r_bin = ((r / (config.r_max / config.r_bins as f64)).floor() as usize).min(config.r_bins - 1);
    // a tiny negative angle can round up to exactly 2π
    let t_bin = ((theta / (TAU / config.theta_bins as f64)).floor() as usize).min(config.theta_bins - 1);
    let z_step = (config.z_max - config.z_min) / config.z_bins as f64;
    let z_bin = (((z - config.z_min) / z_step).floor() as usize).min(config.z_bins - 1);
    Some([r_bin, t_bin, z_bin])
}

pub fn project_bev(cloud: &PointCloud, config: &BevConfig) -> Result<ProjectionIndex> {
    config.validate()?;
    cloud.require_non_empty()?;
    let bins: Vec<_> = cloud.points.iter().map(|p| bev_cell(p.x, p.y, p.z, config)).collect();
    let cells = bins.iter().map(|b| b.map(|[r, t, _]| [r, t])).collect();
    let mut index = ProjectionIndex::build([config.r_bins, config.theta_bins], cells, cloud);
    index.z_bin = Some(bins.iter().map(|b| b.map_or(0, |[_, _, z]| z)).collect());
    Ok(index)
}

/// Each in-bounds point takes its cell's row; out-of-bounds points get 1/K.
pub fn gather_cell_scores_to_points(cell_scores: &ScoreMatrix, index: &ProjectionIndex) -> Result<ScoreMatrix> {
    if cell_scores.rows() != index.num_cells() {
        return Err(Error::shape(format!(
            "{} cell score rows for a grid of {} cells",
            cell_scores.rows(),
            index.num_cells()
        )));
    }
    let k = cell_scores.num_classes();
    let uniform = vec![1.0 / k as f64; k];
    let mut data = Vec::with_capacity(index.point_to_cell.len() * k);
    for i in 0..index.point_to_cell.len() {
        match index.flat_cell(i) {
            Some(c) => data.extend_from_slice(cell_scores.row(c)),
            None => data.extend_from_slice(&uniform),
        }
    }
    Ok(ScoreMatrix::from_normalized(index.point_to_cell.len(), k, data))
}

/// Writes each representative's score row into its cell; empty cells get 1/K.
pub fn scatter_point_scores_to_cells(point_scores: &ScoreMatrix, index: &ProjectionIndex) -> Result<ScoreMatrix> {
    if point_scores.rows() != index.point_to_cell.len() {
        return Err(Error::shape("score rows do not match projected points"));
    }
    let k = point_scores.num_classes();
    let uniform = vec![1.0 / k as f64; k];
    let mut data = Vec::with_capacity(index.num_cells() * k);
    for rep in &index.cell_representative {
        match rep {
            Some(i) => data.extend_from_slice(point_scores.row(*i)),
            None => data.extend_from_slice(&uniform),
        }
    }
    Ok(ScoreMatrix::from_normalized(index.num_cells(), k, data))
}
