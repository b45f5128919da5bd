//! Deterministic synthetic scenes and view-scorer emulation.
//!
//! Scenes are unions of simple geometric primitives, each carrying one class.
//! Scorers emit softmax rows peaked at the ground truth or, with a
//! radius-dependent probability, at a wrong class; two scorers with different
//! profiles err on different points and classes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use super::labels::LabelVector;
use super::scores::ScoreMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Flat ring of ground points, optionally restricted to an azimuth sector.
    GroundAnnulus {
        class: u32,
        r_min: f64,
        r_max: f64,
        z_min: f64,
        z_max: f64,
        #[serde(default)]
        theta_min: Option<f64>,
        #[serde(default)]
        theta_max: Option<f64>,
        weight: f64,
        #[serde(default = "default_intensity")]
        intensity: f64,
    },
    /// `count` axis-aligned boxes scattered over a radius band.
    BoxCluster {
        class: u32,
        count: usize,
        r_min: f64,
        r_max: f64,
        size: [f64; 3],
        z_base: f64,
        weight: f64,
        #[serde(default = "default_intensity")]
        intensity: f64,
    },
    /// `count` thin vertical cylinders scattered over a radius band.
    VerticalPole {
        class: u32,
        count: usize,
        r_min: f64,
        r_max: f64,
        radius: f64,
        height: f64,
        z_base: f64,
        weight: f64,
        #[serde(default = "default_intensity")]
        intensity: f64,
    },
}

fn default_intensity() -> f64 {
    0.5
}

impl Primitive {
    fn class(&self) -> u32 {
        match self {
            Primitive::GroundAnnulus { class, .. }
            | Primitive::BoxCluster { class, .. }
            | Primitive::VerticalPole { class, .. } => *class,
        }
    }

    fn weight(&self) -> f64 {
        match self {
            Primitive::GroundAnnulus { weight, .. }
            | Primitive::BoxCluster { weight, .. }
            | Primitive::VerticalPole { weight, .. } => *weight,
        }
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if self.class() as usize >= num_classes {
            return Err(Error::LabelOutOfRange { label: self.class(), num_classes });
        }
        if !(self.weight() > 0.0) {
            return Err(Error::invalid("primitive weight must be positive"));
        }
        let ok = match *self {
            Primitive::GroundAnnulus { r_min, r_max, z_min, z_max, theta_min, theta_max, .. } => {
                r_min >= 0.0
                    && r_max > r_min
                    && z_max >= z_min
                    && theta_max.unwrap_or(1.0) > theta_min.unwrap_or(0.0)
            }
            Primitive::BoxCluster { count, r_min, r_max, size, .. } => {
                count > 0 && r_min >= 0.0 && r_max > r_min && size.iter().all(|&s| s > 0.0)
            }
            Primitive::VerticalPole { count, r_min, r_max, radius, height, .. } => {
                count > 0 && r_min >= 0.0 && r_max > r_min && radius > 0.0 && height > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("primitive for class {} has non-positive extent", self.class())))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub num_points: usize,
    pub num_classes: usize,
    pub primitives: Vec<Primitive>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_points == 0 {
            return Err(Error::invalid("num_points must be positive"));
        }
        if self.primitives.is_empty() {
            return Err(Error::invalid("scene has no primitives"));
        }
        self.primitives.iter().try_for_each(|p| p.validate(self.num_classes))
    }
}

/// Splits `total` proportionally to `weights` with largest-remainder rounding.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

fn polar(rng: &mut ChaCha8Rng, r_min: f64, r_max: f64) -> (f64, f64) {
    // area-uniform radius
    let r = rng.random_range(r_min * r_min..r_max * r_max).sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    (r * theta.cos(), r * theta.sin())
}

fn jitter_intensity(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    (base + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)
}

fn sample_primitive(rng: &mut ChaCha8Rng, primitive: &Primitive, count: usize, out: &mut Vec<Point>) {
    match *primitive {
        Primitive::GroundAnnulus { r_min, r_max, z_min, z_max, theta_min, theta_max, intensity, .. } => {
            let t0 = theta_min.unwrap_or(0.0);
            let t1 = theta_max.unwrap_or(std::f64::consts::TAU);
            for _ in 0..count {
                let r = rng.random_range(r_min * r_min..r_max * r_max).sqrt();
                let theta = rng.random_range(t0..t1);
                let z = if z_max > z_min { rng.random_range(z_min..z_max) } else { z_min };
                let i = jitter_intensity(rng, intensity);
                out.push(Point::new(r * theta.cos(), r * theta.sin(), z, i));
            }
        }
        Primitive::BoxCluster { count: boxes, r_min, r_max, size, z_base, intensity, .. } => {
            let centers: Vec<(f64, f64)> = (0..boxes).map(|_| polar(rng, r_min, r_max)).collect();
            for j in 0..count {
                let (cx, cy) = centers[j % boxes];
                let x = cx + rng.random_range(-0.5..0.5) * size[0];
                let y = cy + rng.random_range(-0.5..0.5) * size[1];
                let z = z_base + rng.random_range(0.0..1.0) * size[2];
                let i = jitter_intensity(rng, intensity);
                out.push(Point::new(x, y, z, i));
            }
        }
        Primitive::VerticalPole { count: poles, r_min, r_max, radius, height, z_base, intensity, .. } => {
            let bases: Vec<(f64, f64)> = (0..poles).map(|_| polar(rng, r_min, r_max)).collect();
            for j in 0..count {
                let (bx, by) = bases[j % poles];
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let z = z_base + rng.random_range(0.0..height);
                let i = jitter_intensity(rng, intensity);
                out.push(Point::new(bx + radius * a.cos(), by + radius * a.sin(), z, i));
            }
        }
    }
}

/// Samples a labelled scene. Coordinates are rounded to float32 so the
/// in-memory scene equals what a point cloud file round trip yields.
pub fn generate_synthetic_scene(config: &SceneConfig) -> Result<(PointCloud, LabelVector)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights: Vec<f64> = config.primitives.iter().map(Primitive::weight).collect();
    let counts = apportion(config.num_points, &weights);

    let mut points = Vec::with_capacity(config.num_points);
    let mut labels = Vec::with_capacity(config.num_points);
    for (primitive, &count) in config.primitives.iter().zip(&counts) {
        sample_primitive(&mut rng, primitive, count, &mut points);
        labels.extend(std::iter::repeat_n(primitive.class(), count));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let f32_round = |v: f64| v as f32 as f64;
    let points = order
        .iter()
        .map(|&i| {
            let p = points[i];
            Point::new(f32_round(p.x), f32_round(p.y), f32_round(p.z), f32_round(p.intensity))
        })
        .collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    Ok((PointCloud::new(points), LabelVector::new(labels, config.num_classes)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub from: u32,
    pub to: u32,
    pub prob: f64,
}

/// How a synthetic view-scorer errs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerProfile {
    /// Accuracy away from any range degradation or class confusion.
    pub base_accuracy: f64,
    /// `(radius, extra error probability)` knots, linearly interpolated and
    /// held constant beyond the ends. Empty means no range dependence.
    #[serde(default)]
    pub range_curve: Vec<[f64; 2]>,
    /// Systematic class confusions, checked before the generic error draw.
    #[serde(default)]
    pub confusions: Vec<Confusion>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Amplitude of uniform logit noise on every class.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Peak logit used when the scorer is wrong (1.0 when right).
    #[serde(default = "default_error_peak")]
    pub error_peak: f64,
    /// Logit bonus left on the true class when the scorer is wrong.
    #[serde(default)]
    pub hint: f64,
}

fn default_temperature() -> f64 {
    0.25
}

fn default_noise() -> f64 {
    0.5
}

fn default_error_peak() -> f64 {
    1.0
}

impl ScorerProfile {
    pub fn flat(base_accuracy: f64) -> Self {
        Self {
            base_accuracy,
            range_curve: Vec::new(),
            confusions: Vec::new(),
            temperature: default_temperature(),
            noise: default_noise(),
            error_peak: default_error_peak(),
            hint: 0.0,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.base_accuracy > 0.0 && self.base_accuracy <= 1.0) {
            return Err(Error::invalid("base_accuracy must lie in (0, 1]"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise) || self.hint < 0.0 {
            return Err(Error::invalid("noise must lie in [0, 1] and hint must be non-negative"));
        }
        if self.error_peak < self.noise + self.hint {
            return Err(Error::invalid("error_peak must be at least noise + hint"));
        }
        if self.range_curve.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::invalid("range_curve radii must be strictly increasing"));
        }
        for c in &self.confusions {
            let bad = [c.from, c.to].into_iter().find(|&l| l as usize >= num_classes);
            if let Some(label) = bad {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
            if !(0.0..=1.0).contains(&c.prob) {
                return Err(Error::invalid("confusion probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn extra_error(&self, radius: f64) -> f64 {
        let curve = &self.range_curve;
        match curve.len() {
            0 => 0.0,
            _ if radius <= curve[0][0] => curve[0][1],
            _ if radius >= curve[curve.len() - 1][0] => curve[curve.len() - 1][1],
            _ => {
                let j = curve.partition_point(|k| k[0] <= radius);
                let ([r0, e0], [r1, e1]) = (curve[j - 1], curve[j]);
                e0 + (e1 - e0) * (radius - r0) / (r1 - r0)
            }
        }
    }

    /// Probability that the generic error branch fires at `radius`.
    pub fn error_probability(&self, radius: f64) -> f64 {
        ((1.0 - self.base_accuracy) + self.extra_error(radius)).clamp(0.0, 1.0)
    }
}

/// Emits one softmax row per point.
///
/// Every point consumes the same number of random draws whatever branch it
/// takes, so two profiles run under one seed make identical choices on every
/// class neither of them lists in its confusions.
pub fn synthetic_scorer(
    cloud: &PointCloud,
    gt: &LabelVector,
    profile: &ScorerProfile,
    seed: u64,
) -> Result<ScoreMatrix> {
    let k = gt.num_classes();
    profile.validate(k)?;
    if cloud.len() != gt.len() {
        return Err(Error::shape(format!("{} points vs {} labels", cloud.len(), gt.len())));
    }
    if k < 2 {
        return Err(Error::invalid("synthetic scorer needs at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(cloud.len() * k);
    let mut logits = vec![0.0; k];

    for (i, p) in cloud.points.iter().enumerate() {
        let u_error: f64 = rng.random();
        let u_confusion: f64 = rng.random();
        let u_other: f64 = rng.random();
        for l in logits.iter_mut() {
            *l = profile.noise * rng.random::<f64>();
        }

        let truth = if gt.is_ignore(i) { (u_other * k as f64) as usize % k } else { gt.labels[i] as usize };
        let mut target = None;
        let mut cum = 0.0;
        for c in profile.confusions.iter().filter(|c| c.from as usize == truth) {
            cum += c.prob;
            if u_confusion < cum {
                target = Some(c.to as usize);
                break;
            }
        }
        if target.is_none() && u_error < profile.error_probability(p.radius_xy()) {
            // uniform over the k-1 wrong classes
            let j = ((u_other * (k - 1) as f64) as usize).min(k - 2);
            target = Some(if j >= truth { j + 1 } else { j });
        }

        match target {
            Some(t) if t != truth => {
                logits[t] += profile.error_peak;
                logits[truth] += profile.hint;
            }
            _ => logits[truth] += 1.0,
        }

        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / profile.temperature).exp()).collect();
        let sum: f64 = exps.iter().sum();
        // float32 rounding keeps the matrix identical to its AMVS round trip
        data.extend(exps.iter().map(|e| (e / sum) as f32 as f64));
    }
    ScoreMatrix::from_raw(cloud.len(), k, data)
}
