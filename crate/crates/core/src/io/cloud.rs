use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};

const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Distance from the sensor origin.
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Top-view distance from the sensor origin.
    pub fn radius_xy(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// An ordered LiDAR sweep. Point indices are identities throughout the pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::Empty("point cloud has no points"))
        } else {
            Ok(())
        }
    }
}

/// Decodes N×(x, y, z, intensity) little-endian float32 records.
pub fn read_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::MalformedLength { len: bytes.len(), record: RECORD_BYTES });
    }
    let points = bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            let p = Point::new(
                LittleEndian::read_f32(&rec[0..4]) as f64,
                LittleEndian::read_f32(&rec[4..8]) as f64,
                LittleEndian::read_f32(&rec[8..12]) as f64,
                LittleEndian::read_f32(&rec[12..16]) as f64,
            );
            if p.is_finite() {
                Ok(p)
            } else {
                Err(Error::NonFinite { index })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud { points })
}

/// Encodes the cloud as float32 records. Values are narrowed to f32.
pub fn write_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = vec![0u8; cloud.len() * RECORD_BYTES];
    for (p, rec) in cloud.points.iter().zip(out.chunks_exact_mut(RECORD_BYTES)) {
        LittleEndian::write_f32(&mut rec[0..4], p.x as f32);
        LittleEndian::write_f32(&mut rec[4..8], p.y as f32);
        LittleEndian::write_f32(&mut rec[8..12], p.z as f32);
        LittleEndian::write_f32(&mut rec[12..16], p.intensity as f32);
    }
    out
}
