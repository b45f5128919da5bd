use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{HeadSample, PointHeadModel, DEFAULT_WIDTHS};
use crate::assertion::{sample_from, uncertainty_mask, UncertaintyMask};
use crate::error::{Error, Result};
use crate::io::{LabelVector, PointCloud, ScoreMatrix};
use crate::neighborhood::{assemble_point_features, assemble_set_features, FeatureOptions, KdTree};
use crate::nn::{OneCycle, TrainState};

/// One scan worth of inputs: geometry, ground truth and both views' scores.
#[derive(Debug, Clone)]
pub struct ScanData {
    pub cloud: PointCloud,
    pub gt: LabelVector,
    pub f: ScoreMatrix,
    pub g: ScoreMatrix,
}

impl ScanData {
    pub fn validate(&self) -> Result<()> {
        self.f.check_same_shape(&self.g)?;
        let n = self.cloud.len();
        if self.gt.len() != n || self.f.rows() != n {
            return Err(Error::shape(format!(
                "scan with {n} points, {} labels, {} score rows",
                self.gt.len(),
                self.f.rows()
            )));
        }
        if self.gt.num_classes() != self.f.num_classes() {
            return Err(Error::shape("label and score class counts differ"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `1 / sqrt(frequency)`, rescaled to average 1 over present classes.
    #[default]
    SqrtInverse,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Batches drawn from each scan per epoch.
    #[serde(default = "d_batches_per_scan")]
    pub batches_per_scan: usize,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_neighbors")]
    pub neighbors: usize,
    #[serde(default = "d_widths")]
    pub widths: [usize; 3],
    #[serde(default = "d_schedule")]
    pub schedule: OneCycle,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weighting: ClassWeighting,
    #[serde(default)]
    pub features: FeatureOptions,
}

fn d_epochs() -> usize {
    20
}
fn d_batch() -> usize {
    256
}
fn d_batches_per_scan() -> usize {
    1
}
fn d_tau() -> f64 {
    0.85
}
fn d_neighbors() -> usize {
    15
}
fn d_widths() -> [usize; 3] {
    DEFAULT_WIDTHS
}
fn d_schedule() -> OneCycle {
    OneCycle::new(0.01)
}
fn d_momentum() -> f64 {
    0.9
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            batches_per_scan: d_batches_per_scan(),
            tau: d_tau(),
            neighbors: d_neighbors(),
            widths: d_widths(),
            schedule: d_schedule(),
            momentum: d_momentum(),
            seed: 0,
            weighting: ClassWeighting::default(),
            features: FeatureOptions::default(),
        }
    }
}

impl HeadTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batches_per_scan == 0 || self.neighbors == 0 {
            return Err(Error::invalid("batch_size, batches_per_scan and neighbors must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau must lie in [0, 1]"));
        }
        if !(self.schedule.lr_max > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("lr_max must be positive and momentum in [0, 1)"));
        }
        if !(self.features.coord_scale > 0.0) {
            return Err(Error::invalid("coord_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: PointHeadModel,
    pub trace: Vec<EpochStats>,
    pub class_weights: Vec<f64>,
}

/// `epoch,mean_loss,lr` rows under a header line.
pub fn loss_trace_csv(trace: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for e in trace {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.lr));
    }
    out
}

pub fn class_weights<'a>(
    labels: impl IntoIterator<Item = &'a LabelVector>,
    num_classes: usize,
    mode: ClassWeighting,
) -> Vec<f64> {
    if mode == ClassWeighting::Uniform {
        return vec![1.0; num_classes];
    }
    let mut counts = vec![0u64; num_classes];
    for lv in labels {
        for &l in &lv.labels {
            if (l as usize) < num_classes {
                counts[l as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / (c as f64 / total as f64).sqrt() })
        .collect();
    let present = raw.iter().filter(|&&w| w > 0.0).count();
    if present == 0 {
        return vec![1.0; num_classes];
    }
    let mean = raw.iter().sum::<f64>() / present as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// Mixes a base seed with stream coordinates into an independent sub-seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(base) ^ a) ^ b.rotate_left(32))
}

/// Builds a point-head sample for each index; targets come from `gt`.
pub fn assemble_samples(
    scan: &ScanData,
    tree: &KdTree,
    indices: &[usize],
    neighbors: usize,
    opts: &FeatureOptions,
) -> Result<Vec<HeadSample>> {
    indices
        .par_iter()
        .map(|&i| {
            let nn = tree.knn_query(i, neighbors)?;
            Ok(HeadSample {
                point: assemble_point_features(i, &scan.f, &scan.g, &scan.cloud, opts)?,
                set: assemble_set_features(i, &nn, &scan.f, &scan.g, &scan.cloud, opts)?,
                target: scan.gt.labels[i],
            })
        })
        .collect()
}

struct Prepared<'a> {
    scan: &'a ScanData,
    tree: KdTree,
    candidates: Vec<usize>,
}

/// Uncertain, non-IGNORE points of a scan under `tau`.
pub fn training_candidates(scan: &ScanData, mask: &UncertaintyMask) -> Vec<usize> {
    mask.uncertain_indices().into_iter().filter(|&i| !scan.gt.is_ignore(i)).collect()
}

/// Trains a point head on uncertain points, `batches_per_scan` batches per scan per epoch.
pub fn train_point_head(scans: &[ScanData], cfg: &HeadTrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let first = scans.first().ok_or(Error::Empty("no training scans"))?;
    let k = first.f.num_classes();
    for s in scans {
        s.validate()?;
        if s.f.num_classes() != k {
            return Err(Error::shape("scans disagree on the number of classes"));
        }
        if s.cloud.len() < cfg.neighbors {
            return Err(Error::invalid(format!("{} neighbors requested from a {}-point scan", cfg.neighbors, s.cloud.len())));
        }
    }

    let mut model = PointHeadModel::init(k, cfg.neighbors, cfg.widths, cfg.features, cfg.seed)?;
    let weights = class_weights(scans.iter().map(|s| &s.gt), k, cfg.weighting);
    if cfg.epochs == 0 {
        return Ok(TrainOutput { model, trace: Vec::new(), class_weights: weights });
    }

    let mut prepared = Vec::with_capacity(scans.len());
    for (idx, scan) in scans.iter().enumerate() {
        let mask = uncertainty_mask(&scan.f, &scan.g, cfg.tau)?;
        let candidates = training_candidates(scan, &mask);
        if candidates.is_empty() {
            log::warn!("scan {idx} has no uncertain points at tau={}; skipped", cfg.tau);
            continue;
        }
        prepared.push(Prepared { scan, tree: KdTree::build(&scan.cloud)?, candidates });
    }
    if prepared.is_empty() {
        return Err(Error::Empty("no scan has uncertain points to train on"));
    }

    let steps_per_epoch = prepared.len() * cfg.batches_per_scan;
    let total = cfg.epochs * steps_per_epoch;
    let mut state = TrainState::new(total, cfg.schedule, cfg.momentum);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..steps_per_epoch).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for &step in &order {
            let p = &prepared[step % prepared.len()];
            let batch_seed = derive_seed(cfg.seed, 2 + epoch as u64, step as u64);
            let indices = sample_from(&p.candidates, cfg.batch_size, batch_seed)?;
            let batch = assemble_samples(p.scan, &p.tree, &indices, cfg.neighbors, &cfg.features)?;
            let (loss, grads) = model.loss_and_gradients(&batch, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss became {loss} in epoch {epoch}")));
            }
            let grad_blocks: Vec<&[f64]> = grads.layers().into_iter().flat_map(|l| l.params()).collect();
            lr = state.sgd_step(model.param_blocks_mut(), grad_blocks)?;
            loss_sum += loss;
        }
        let stats = EpochStats { epoch, mean_loss: loss_sum / steps_per_epoch as f64, lr };
        log::debug!("epoch {epoch}: loss {:.5} lr {:.6}", stats.mean_loss, stats.lr);
        trace.push(stats);
    }
    Ok(TrainOutput { model, trace, class_weights: weights })
}

/// Point-head labels for every uncertain point, as `(index, label)` pairs in
/// index order. Certain points are not visited.
pub fn predict_uncertain(
    model: &PointHeadModel,
    cloud: &PointCloud,
    f: &ScoreMatrix,
    g: &ScoreMatrix,
    mask: &UncertaintyMask,
) -> Result<Vec<(usize, u32)>> {
    let indices = mask.uncertain_indices();
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    if model.neighbors > cloud.len() {
        return Err(Error::invalid(format!("{} neighbors requested from {} points", model.neighbors, cloud.len())));
    }
    if f.num_classes() != model.num_classes {
        return Err(Error::shape("score classes differ from the model"));
    }
    let tree = KdTree::build(cloud)?;
    predict_with_tree(model, &tree, cloud, f, g, &indices)
}

pub(crate) fn predict_with_tree(
    model: &PointHeadModel,
    tree: &KdTree,
    cloud: &PointCloud,
    f: &ScoreMatrix,
    g: &ScoreMatrix,
    indices: &[usize],
) -> Result<Vec<(usize, u32)>> {
    let opts = &model.features;
    indices
        .par_iter()
        .map(|&i| {
            let nn = tree.knn_query(i, model.neighbors)?;
            let p = assemble_point_features(i, f, g, cloud, opts)?;
            let s = assemble_set_features(i, &nn, f, g, cloud, opts)?;
            let logits = model.forward(&p, &s)?;
            Ok((i, crate::io::argmax(&logits)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_inverse_weights() {
        let a = LabelVector::new(vec![0, 0, 0, 0, 1, 2], 4).unwrap();
        let w = class_weights([&a], 4, ClassWeighting::SqrtInverse);
        // frequencies 4/6, 1/6, 1/6, absent
        let raw = [1.0 / (4.0f64 / 6.0).sqrt(), 1.0 / (1.0f64 / 6.0).sqrt(), 1.0 / (1.0f64 / 6.0).sqrt()];
        let mean = raw.iter().sum::<f64>() / 3.0;
        for c in 0..3 {
            assert!((w[c] - raw[c] / mean).abs() < 1e-12);
        }
        assert_eq!(w[3], 0.0);
        assert!((w[1] / w[0] - 2.0).abs() < 1e-12);
        assert_eq!(class_weights([&a], 4, ClassWeighting::Uniform), vec![1.0; 4]);
    }

    #[test]
    fn ignore_labels_do_not_count() {
        let a = LabelVector::new(vec![0, 1, 2, 2, 2], 2).unwrap();
        let w = class_weights([&a], 2, ClassWeighting::SqrtInverse);
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    }

    #[test]
    fn config_validation() {
        assert!(HeadTrainConfig::default().validate().is_ok());
        assert!(HeadTrainConfig { tau: 1.2, ..Default::default() }.validate().is_err());
        assert!(HeadTrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
