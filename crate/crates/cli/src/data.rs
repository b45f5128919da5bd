//! Scan sets: synthetic generation and manifest-described files on disk.

use std::path::{Path, PathBuf};

use amvnet_core::io::{
    generate_synthetic_scene, read_labels, read_point_cloud, read_scores, synthetic_scorer, RemapTable,
};
use amvnet_core::pointhead::{derive_seed, ScanData};
use anyhow::Context as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{config_err, EvalSplit, LoadedConfig, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn selected_by(self, which: EvalSplit) -> bool {
        matches!(
            (which, self),
            (EvalSplit::All, _) | (EvalSplit::Train, Split::Train) | (EvalSplit::Val, Split::Val)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    pub cloud: PathBuf,
    pub labels: PathBuf,
    pub scores_a: PathBuf,
    pub scores_b: PathBuf,
}

/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    #[serde(rename = "scan")]
    pub scans: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn to_text(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct Scan {
    pub name: String,
    pub split: Split,
    pub data: ScanData,
}

pub fn scan_name(i: usize) -> String {
    format!("scan_{i:04}")
}

pub(crate) fn synth_scan(syn: &SyntheticConfig, seed: u64, num_classes: usize, i: usize) -> anyhow::Result<Scan> {
    let idx = i as u64;
    let (cloud, gt) = generate_synthetic_scene(&syn.scene(derive_seed(seed, 10, idx), num_classes))?;
    let f = synthetic_scorer(&cloud, &gt, &syn.scorer_a, derive_seed(seed, 11, idx))?;
    let g = synthetic_scorer(&cloud, &gt, &syn.scorer_b, derive_seed(seed, 12, idx))?;
    let split = if i + syn.val_scans >= syn.scans { Split::Val } else { Split::Train };
    Ok(Scan { name: scan_name(i), split, data: ScanData { cloud, gt, f, g } })
}

fn read_entry(dir: &Path, e: &ManifestEntry, remap: &RemapTable) -> anyhow::Result<Scan> {
    let read = |p: &Path| {
        let p = dir.join(p);
        std::fs::read(&p).with_context(|| format!("reading {}", p.display()))
    };
    let data = ScanData {
        cloud: read_point_cloud(&read(&e.cloud)?).with_context(|| format!("scan {} cloud", e.name))?,
        gt: read_labels(&read(&e.labels)?, remap).with_context(|| format!("scan {} labels", e.name))?,
        f: read_scores(&read(&e.scores_a)?).with_context(|| format!("scan {} scores_a", e.name))?,
        g: read_scores(&read(&e.scores_b)?).with_context(|| format!("scan {} scores_b", e.name))?,
    };
    data.validate().with_context(|| format!("scan {}", e.name))?;
    Ok(Scan { name: e.name.clone(), split: e.split, data })
}

/// Every scan of the run, in manifest or index order.
pub fn load_scans(loaded: &LoadedConfig) -> anyhow::Result<Vec<Scan>> {
    let c = &loaded.config;
    if let Some(syn) = &c.synthetic {
        return (0..syn.scans).into_par_iter().map(|i| synth_scan(syn, c.seed, c.num_classes, i)).collect();
    }
    let ds = c.dataset.as_ref().ok_or_else(|| config_err("no data source"))?;
    let path = loaded.resolve(&ds.manifest);
    let manifest = Manifest::read(&path)?;
    if manifest.num_classes != c.num_classes {
        return Err(config_err(format!(
            "manifest has {} classes, config {}",
            manifest.num_classes, c.num_classes
        )));
    }
    let remap = match &ds.remap {
        Some(r) => {
            let text = std::fs::read_to_string(loaded.resolve(r))?;
            RemapTable::parse(&text, c.num_classes).map_err(|e| config_err(format!("remap: {e}")))?
        }
        None => RemapTable::identity(c.num_classes),
    };
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.scans.par_iter().map(|e| read_entry(&dir, e, &remap)).collect()
}
