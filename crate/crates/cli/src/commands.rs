use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use amvnet_core::assertion::{similarity_histogram, uncertainty_mask, Histogram};
use amvnet_core::fusion::{combine, fuse_predictions, Combiner, FusionResult};
use amvnet_core::io::{
    augment_cloud, read_predictions, write_labels, write_point_cloud, write_predictions, write_scores,
    AugmentParams, LabelVector,
};
use amvnet_core::metrics::{confusion_matrix, stratified_miou, ConfusionMatrix};
use amvnet_core::nn::{read_checkpoint, write_checkpoint};
use amvnet_core::pointhead::{
    derive_seed, loss_trace_csv, train_point_head, HeadTrainConfig, PointHeadModel, ScanData, TrainOutput,
};
use amvnet_core::projection::{project_bev, project_rv};
use anyhow::Context as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{config_err, LoadedConfig};
use crate::data::{load_scans, Manifest, ManifestEntry, Scan, Split};

pub const CHECKPOINT_FILE: &str = "checkpoint.amvm";
pub const PREDICTIONS_DIR: &str = "predictions";

/// Creates `out` and records the configuration that produced it.
fn prepare_out(loaded: &LoadedConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), &loaded.raw)?;
    if loaded.seed_overridden {
        fs::write(out.join("seed.txt"), format!("{}\n", loaded.config.seed))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn head_config(loaded: &LoadedConfig) -> HeadTrainConfig {
    let mut head = loaded.config.head.clone();
    head.seed = derive_seed(loaded.config.seed, 3, head.seed);
    head
}

pub fn cmd_synth(loaded: &LoadedConfig, out: &Path) -> anyhow::Result<Manifest> {
    if loaded.config.synthetic.is_none() {
        return Err(config_err("synth needs a [synthetic] section"));
    }
    let scans = load_scans(loaded)?;
    prepare_out(loaded, out)?;
    fs::create_dir_all(out.join("scans"))?;

    let mut manifest = Manifest { num_classes: loaded.config.num_classes, scans: Vec::new() };
    for s in &scans {
        let entry = ManifestEntry {
            name: s.name.clone(),
            split: s.split,
            cloud: PathBuf::from(format!("scans/{}.bin", s.name)),
            labels: PathBuf::from(format!("scans/{}.label", s.name)),
            scores_a: PathBuf::from(format!("scans/{}.a.amvs", s.name)),
            scores_b: PathBuf::from(format!("scans/{}.b.amvs", s.name)),
        };
        write_file(&out.join(&entry.cloud), write_point_cloud(&s.data.cloud))?;
        write_file(&out.join(&entry.labels), write_labels(&s.data.gt)?)?;
        write_file(&out.join(&entry.scores_a), write_scores(&s.data.f)?)?;
        write_file(&out.join(&entry.scores_b), write_scores(&s.data.g)?)?;
        manifest.scans.push(entry);
    }
    write_file(&out.join("manifest.toml"), manifest.to_text()?)?;
    log::info!("wrote {} scans to {}", scans.len(), out.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub name: String,
    pub points: usize,
    pub rv_points: usize,
    pub rv_cells: usize,
    pub bev_points: usize,
    pub bev_cells: usize,
}

/// Projects every scan to both views; writes range images and occupancy counts.
pub fn cmd_project(loaded: &LoadedConfig, out: &Path) -> anyhow::Result<Vec<ProjectionRow>> {
    let c = &loaded.config;
    let scans = load_scans(loaded)?;
    let projected: Vec<_> = scans
        .par_iter()
        .map(|s| -> anyhow::Result<_> {
            let (rv, image) = project_rv(&s.data.cloud, &c.rv)?;
            let bev = project_bev(&s.data.cloud, &c.bev)?;
            let row = ProjectionRow {
                name: s.name.clone(),
                points: s.data.cloud.len(),
                rv_points: rv.point_to_cell.iter().flatten().count(),
                rv_cells: rv.occupied_cells(),
                bev_points: bev.point_to_cell.iter().flatten().count(),
                bev_cells: bev.occupied_cells(),
            };
            Ok((row, image.to_bytes()))
        })
        .collect::<anyhow::Result<_>>()?;

    prepare_out(loaded, out)?;
    fs::create_dir_all(out.join("rv"))?;
    let mut csv = String::from("scan,points,rv_points,rv_cells,bev_points,bev_cells\n");
    let mut rows = Vec::new();
    for (row, image) in projected {
        write_file(&out.join("rv").join(format!("{}.amvi", row.name)), image)?;
        writeln!(csv, "{},{},{},{},{},{}", row.name, row.points, row.rv_points, row.rv_cells, row.bev_points, row.bev_cells)?;
        rows.push(row);
    }
    write_file(&out.join("projection.csv"), csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertSummary {
    pub tau: f64,
    pub points: usize,
    pub uncertain: usize,
    pub histogram: Histogram,
}

impl AssertSummary {
    pub fn fraction(&self) -> f64 {
        self.uncertain as f64 / self.points as f64
    }
}

/// Similarity histogram and uncertain fraction over every scan.
pub fn cmd_assert(loaded: &LoadedConfig, out: &Path) -> anyhow::Result<AssertSummary> {
    let c = &loaded.config;
    let tau = c.head.tau;
    let scans = load_scans(loaded)?;
    let mut csv = String::from("scan,points,uncertain,fraction\n");
    let mut total = AssertSummary { tau, points: 0, uncertain: 0, histogram: Histogram::default() };
    for s in &scans {
        let mask = uncertainty_mask(&s.data.f, &s.data.g, tau)?;
        let h = similarity_histogram(&mask, c.eval.histogram_bins)?;
        if total.histogram.counts.is_empty() {
            total.histogram = h;
        } else {
            total.histogram.counts.iter_mut().zip(&h.counts).for_each(|(a, b)| *a += b);
        }
        writeln!(csv, "{},{},{},{}", s.name, mask.len(), mask.uncertain_count(), mask.uncertain_fraction())?;
        total.points += mask.len();
        total.uncertain += mask.uncertain_count();
    }
    writeln!(csv, "all,{},{},{}", total.points, total.uncertain, total.fraction())?;

    prepare_out(loaded, out)?;
    write_file(&out.join("histogram.csv"), total.histogram.to_csv())?;
    write_file(&out.join("uncertain.csv"), csv)?;
    log::info!("uncertain fraction at tau={tau}: {:.4}", total.fraction());
    Ok(total)
}

fn random_augment(loaded: &LoadedConfig, scan_index: usize) -> AugmentParams {
    let a = &loaded.config.augment;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(loaded.config.seed, 20, scan_index as u64));
    let scale = if a.scale_max > a.scale_min { rng.random_range(a.scale_min..a.scale_max) } else { a.scale_min };
    let flip_x = a.flip && rng.random_bool(0.5);
    let flip_y = a.flip && rng.random_bool(0.5);
    let yaw = if a.random_yaw { rng.random_range(0.0..std::f64::consts::TAU) } else { 0.0 };
    AugmentParams { scale, flip_x, flip_y, jitter_sigma: a.jitter_sigma, yaw }
}

fn training_scans(loaded: &LoadedConfig, scans: &[Scan], augment: bool) -> anyhow::Result<Vec<ScanData>> {
    scans
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(i, s)| {
            let mut data = s.data.clone();
            if augment {
                let seed = derive_seed(loaded.config.seed, 21, i as u64);
                data.cloud = augment_cloud(&data.cloud, &random_augment(loaded, i), seed)?;
            }
            Ok(data)
        })
        .collect()
}

fn train_on(loaded: &LoadedConfig, scans: &[Scan], head: &HeadTrainConfig, augment: bool) -> anyhow::Result<TrainOutput> {
    let train = training_scans(loaded, scans, augment)?;
    if train.is_empty() {
        return Err(config_err("no scans in the train split"));
    }
    Ok(train_point_head(&train, head)?)
}

/// Trains the point head on the train split; writes the checkpoint and loss trace.
pub fn cmd_train(loaded: &LoadedConfig, out: &Path, augment: bool) -> anyhow::Result<TrainOutput> {
    let scans = load_scans(loaded)?;
    let trained = train_on(loaded, &scans, &head_config(loaded), augment)?;
    prepare_out(loaded, out)?;
    write_file(&out.join(CHECKPOINT_FILE), write_checkpoint(&trained.model.to_layers()))?;
    write_file(&out.join("loss_trace.csv"), loss_trace_csv(&trained.trace))?;
    Ok(trained)
}

pub fn load_model(loaded: &LoadedConfig, checkpoint: &Path) -> anyhow::Result<PointHeadModel> {
    let bytes = fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let head = &loaded.config.head;
    let model = PointHeadModel::from_layers(read_checkpoint(&bytes)?, head.neighbors, head.features)
        .with_context(|| format!("checkpoint {}", checkpoint.display()))?;
    if model.num_classes != loaded.config.num_classes {
        anyhow::bail!("checkpoint has {} classes, config {}", model.num_classes, loaded.config.num_classes);
    }
    Ok(model)
}

fn fuse_all(scans: &[Scan], tau: f64, model: &PointHeadModel) -> anyhow::Result<Vec<FusionResult>> {
    scans
        .iter()
        .map(|s| {
            fuse_predictions(&s.data.cloud, &s.data.f, &s.data.g, tau, model)
                .with_context(|| format!("fusing {}", s.name))
        })
        .collect()
}

/// Fuses every scan with a trained head; writes `<name>.pred` and `<name>.src`.
pub fn cmd_fuse(loaded: &LoadedConfig, checkpoint: &Path, out: &Path) -> anyhow::Result<Vec<FusionResult>> {
    let model = load_model(loaded, checkpoint)?;
    let scans = load_scans(loaded)?;
    let fused = fuse_all(&scans, loaded.config.head.tau, &model)?;
    prepare_out(loaded, out)?;
    let dir = out.join(PREDICTIONS_DIR);
    fs::create_dir_all(&dir)?;
    for (s, r) in scans.iter().zip(&fused) {
        write_file(&dir.join(format!("{}.pred", s.name)), write_predictions(&r.labels)?)?;
        write_file(&dir.join(format!("{}.src", s.name)), r.source_bytes())?;
    }
    Ok(fused)
}

/// Where `eval` takes its fused labels from.
#[derive(Debug, Clone)]
pub enum PredictionSource {
    Directory(PathBuf),
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub method: &'static str,
    pub miou: f64,
    pub fw_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub confusion: ConfusionMatrix,
    pub comparison: Vec<MethodScore>,
}

impl EvalSummary {
    pub fn method(&self, name: &str) -> Option<&MethodScore> {
        self.comparison.iter().find(|m| m.method == name)
    }
}

fn accumulate(k: usize, pairs: impl Iterator<Item = anyhow::Result<(LabelVector, LabelVector)>>) -> anyhow::Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(k);
    for pair in pairs {
        let (pred, gt) = pair?;
        cm.merge(&confusion_matrix(&pred, &gt, k)?)?;
    }
    Ok(cm)
}

fn score(method: &'static str, cm: &ConfusionMatrix) -> anyhow::Result<MethodScore> {
    Ok(MethodScore { method, miou: cm.miou()?, fw_iou: cm.fw_iou()? })
}

/// Metrics of the fused labels on the evaluation split, next to single-view
/// and plain-ensemble baselines computed from the same score files.
pub fn cmd_eval(loaded: &LoadedConfig, source: &PredictionSource, out: &Path) -> anyhow::Result<EvalSummary> {
    let c = &loaded.config;
    let k = c.num_classes;
    let scans: Vec<Scan> = load_scans(loaded)?.into_iter().filter(|s| s.split.selected_by(c.eval.split)).collect();
    if scans.is_empty() {
        return Err(config_err("evaluation split is empty"));
    }
    let preds: Vec<LabelVector> = match source {
        PredictionSource::Checkpoint(p) => {
            let model = load_model(loaded, p)?;
            fuse_all(&scans, c.head.tau, &model)?.into_iter().map(|r| r.labels).collect()
        }
        PredictionSource::Directory(dir) => scans
            .iter()
            .map(|s| {
                let path = dir.join(format!("{}.pred", s.name));
                let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                let pred = read_predictions(&bytes, k)?;
                if pred.len() != s.data.gt.len() {
                    anyhow::bail!("{} holds {} labels for {} points", path.display(), pred.len(), s.data.gt.len());
                }
                Ok(pred)
            })
            .collect::<anyhow::Result<_>>()?,
    };

    let fused = accumulate(k, scans.iter().zip(&preds).map(|(s, p)| Ok((p.clone(), s.data.gt.clone()))))?;
    let mut strata: Option<Vec<ConfusionMatrix>> = None;
    for (s, p) in scans.iter().zip(&preds) {
        let rep = stratified_miou(p, &s.data.gt, &s.data.cloud, &c.eval.bin_edges)?;
        match &mut strata {
            None => strata = Some(rep.strata.into_iter().map(|st| st.confusion).collect()),
            Some(acc) => {
                for (a, st) in acc.iter_mut().zip(&rep.strata) {
                    a.merge(&st.confusion)?;
                }
            }
        }
    }

    let single = |pick: fn(&ScanData) -> &amvnet_core::io::ScoreMatrix| {
        accumulate(k, scans.iter().map(move |s| Ok((LabelVector::new(pick(&s.data).argmax(), k)?, s.data.gt.clone()))))
    };
    let combined = |how: Combiner| {
        accumulate(
            k,
            scans.iter().map(move |s| {
                let m = combine(&s.data.f, &s.data.g, how)?;
                Ok((LabelVector::new(m.argmax(), k)?, s.data.gt.clone()))
            }),
        )
    };
    let comparison = vec![
        score("scorer_a", &single(|d| &d.f)?)?,
        score("scorer_b", &single(|d| &d.g)?)?,
        score("ensemble_geometric", &combined(Combiner::Geometric)?)?,
        score("ensemble_arithmetic", &combined(Combiner::Arithmetic)?)?,
        score("ensemble_max", &combined(Combiner::Max)?)?,
        score("amvnet", &fused)?,
    ];

    let mut strata_csv = String::from("r_lo,r_hi,miou\n");
    for (w, cm) in c.eval.bin_edges.windows(2).zip(strata.unwrap_or_default()) {
        let v = cm.miou().map_or_else(|_| "nan".to_string(), |m| m.to_string());
        writeln!(strata_csv, "{},{},{}", w[0], w[1], v)?;
    }
    let mut cmp_csv = String::from("method,miou,fw_iou\n");
    for m in &comparison {
        writeln!(cmp_csv, "{},{},{}", m.method, m.miou, m.fw_iou)?;
    }

    prepare_out(loaded, out)?;
    write_file(&out.join("metrics.csv"), fused.report_csv()?)?;
    write_file(&out.join("strata.csv"), strata_csv)?;
    write_file(&out.join("comparison.csv"), cmp_csv)?;
    Ok(EvalSummary { confusion: fused, comparison })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    Tau,
    Neighbors,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::Neighbors => "neighbors",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub miou: f64,
    pub uncertain_fraction: f64,
}

/// Retrains and re-evaluates the head for every value of one hyperparameter.
pub fn cmd_sweep(loaded: &LoadedConfig, axis: SweepAxis, values: &[f64], out: &Path) -> anyhow::Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(config_err("sweep needs at least one value"));
    }
    let base = head_config(loaded);
    let heads = values
        .iter()
        .map(|&v| {
            let mut h = base.clone();
            match axis {
                SweepAxis::Tau => h.tau = v,
                SweepAxis::Neighbors => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(config_err(format!("neighbor count {v} is not a positive integer")));
                    }
                    h.neighbors = v as usize;
                }
            }
            h.validate().map_err(|e| config_err(e.to_string()))?;
            Ok(h)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let scans = load_scans(loaded)?;
    let eval: Vec<Scan> = scans.iter().filter(|s| s.split.selected_by(loaded.config.eval.split)).cloned().collect();
    if eval.is_empty() {
        return Err(config_err("evaluation split is empty"));
    }
    let k = loaded.config.num_classes;
    let mut rows = Vec::with_capacity(values.len());
    for (&value, head) in values.iter().zip(&heads) {
        let trained = train_on(loaded, &scans, head, false)?;
        let fused = fuse_all(&eval, head.tau, &trained.model)?;
        let cm = accumulate(k, eval.iter().zip(&fused).map(|(s, r)| Ok((r.labels.clone(), s.data.gt.clone()))))?;
        let uncertain: usize = fused.iter().map(|r| r.mask.uncertain_count()).sum();
        let points: usize = fused.iter().map(|r| r.mask.len()).sum();
        let row = SweepRow { value, miou: cm.miou()?, uncertain_fraction: uncertain as f64 / points as f64 };
        log::info!("{}={value}: miou {:.4}, uncertain {:.4}", axis.name(), row.miou, row.uncertain_fraction);
        rows.push(row);
    }

    let mut csv = format!("{},miou,uncertain_fraction\n", axis.name());
    for r in &rows {
        writeln!(csv, "{},{},{}", r.value, r.miou, r.uncertain_fraction)?;
    }
    prepare_out(loaded, out)?;
    write_file(&out.join(format!("sweep_{}.csv", axis.name())), csv)?;
    Ok(rows)
}
