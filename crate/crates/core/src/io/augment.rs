use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub scale: f64,
    #[serde(default)]
    pub flip_x: bool,
    #[serde(default)]
    pub flip_y: bool,
    #[serde(default)]
    pub jitter_sigma: f64,
    /// Rotation about the vertical axis, radians.
    #[serde(default)]
    pub yaw: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { scale: 1.0, flip_x: false, flip_y: false, jitter_sigma: 0.0, yaw: 0.0 }
    }
}

/// Applies scale, then flips, then yaw rotation, then Gaussian jitter.
/// Intensity, point count and order are preserved.
pub fn augment_cloud(cloud: &PointCloud, params: &AugmentParams, seed: u64) -> Result<PointCloud> {
    let AugmentParams { scale, flip_x, flip_y, jitter_sigma, yaw } = *params;
    if !scale.is_finite() || !jitter_sigma.is_finite() || !yaw.is_finite() {
        return Err(Error::invalid("augmentation parameters must be finite"));
    }
    if scale <= 0.0 {
        return Err(Error::invalid("scale must be positive"));
    }
    if jitter_sigma < 0.0 {
        return Err(Error::invalid("jitter_sigma must be non-negative"));
    }
    let (sin, cos) = yaw.sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, jitter_sigma).map_err(|e| Error::invalid(e.to_string()))?;

    let points = cloud
        .points
        .iter()
        .map(|p| {
            let (mut x, mut y, mut z) = (p.x * scale, p.y * scale, p.z * scale);
            if flip_x {
                x = -x;
            }
            if flip_y {
                y = -y;
            }
            let (rx, ry) = (cos * x - sin * y, sin * x + cos * y);
            x = rx;
            y = ry;
            if jitter_sigma > 0.0 {
                x += jitter.sample(&mut rng);
                y += jitter.sample(&mut rng);
                z += jitter.sample(&mut rng);
            }
            Point::new(x, y, z, p.intensity)
        })
        .collect();
    Ok(PointCloud::new(points))
}
