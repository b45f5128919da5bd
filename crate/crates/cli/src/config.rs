use std::fmt;
use std::path::{Path, PathBuf};

use amvnet_core::io::{Primitive, SceneConfig, ScorerProfile};
use amvnet_core::pointhead::HeadTrainConfig;
use amvnet_core::projection::{BevConfig, RvConfig};
use serde::Deserialize;

/// A problem with the run configuration or command-line usage.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub(crate) fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub num_classes: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default = "default_rv")]
    pub rv: RvConfig,
    #[serde(default)]
    pub bev: BevConfig,
    #[serde(default)]
    pub head: HeadTrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_rv() -> RvConfig {
    RvConfig::spherical(64, 2048, 3f64.to_radians(), -25f64.to_radians())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub scans: usize,
    /// The last `val_scans` scans form the validation split.
    #[serde(default)]
    pub val_scans: usize,
    pub num_points: usize,
    pub primitives: Vec<Primitive>,
    pub scorer_a: ScorerProfile,
    pub scorer_b: ScorerProfile,
}

impl SyntheticConfig {
    pub fn scene(&self, seed: u64, num_classes: usize) -> SceneConfig {
        SceneConfig { seed, num_points: self.num_points, num_classes, primitives: self.primitives.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub remap: Option<PathBuf>,
}

/// Random per-scan augmentation used by `train --augment`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "one")]
    pub scale_min: f64,
    #[serde(default = "one")]
    pub scale_max: f64,
    #[serde(default)]
    pub flip: bool,
    #[serde(default)]
    pub jitter_sigma: f64,
    #[serde(default)]
    pub random_yaw: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { scale_min: 1.0, scale_max: 1.0, flip: false, jitter_sigma: 0.0, random_yaw: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Val,
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_edges")]
    pub bin_edges: Vec<f64>,
    #[serde(default)]
    pub split: EvalSplit,
    #[serde(default = "default_histogram_bins")]
    pub histogram_bins: usize,
}

fn default_edges() -> Vec<f64> {
    vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]
}

fn default_histogram_bins() -> usize {
    20
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { bin_edges: default_edges(), split: EvalSplit::Val, histogram_bins: default_histogram_bins() }
    }
}

/// A parsed, validated configuration together with its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: String,
    pub base_dir: PathBuf,
    pub seed_overridden: bool,
}

impl LoadedConfig {
    pub fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(raw, base_dir, seed)
    }

    pub fn from_text(raw: String, base_dir: PathBuf, seed: Option<u64>) -> anyhow::Result<Self> {
        let mut config: RunConfig = toml::from_str(&raw).map_err(|e| config_err(e.to_string()))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        let loaded = Self { config, raw, base_dir, seed_overridden: seed.is_some() };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `--out` wins over the config's `out_dir`.
    pub fn out_dir(&self, flag: Option<&Path>) -> anyhow::Result<PathBuf> {
        match (flag, &self.config.out_dir) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(p)) => Ok(self.resolve(p)),
            (None, None) => Err(config_err("no output directory: pass --out or set out_dir")),
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        let c = &self.config;
        let wrap = |r: amvnet_core::Result<()>| r.map_err(|e| config_err(e.to_string()));
        if c.num_classes < 2 || c.num_classes > u16::MAX as usize {
            return Err(config_err("num_classes must lie in [2, 65535]"));
        }
        match (&c.synthetic, &c.dataset) {
            (Some(_), Some(_)) => return Err(config_err("set exactly one of [synthetic] and [dataset], not both")),
            (None, None) => return Err(config_err("set exactly one of [synthetic] and [dataset]")),
            (Some(s), None) => {
                if s.scans == 0 {
                    return Err(config_err("synthetic.scans must be positive"));
                }
                if s.val_scans >= s.scans {
                    return Err(config_err("synthetic.val_scans must leave at least one training scan"));
                }
                wrap(s.scene(c.seed, c.num_classes).validate())?;
                wrap(s.scorer_a.validate(c.num_classes))?;
                wrap(s.scorer_b.validate(c.num_classes))?;
                if s.num_points < c.head.neighbors {
                    return Err(config_err("synthetic.num_points is smaller than head.neighbors"));
                }
            }
            (None, Some(d)) => {
                let manifest = self.resolve(&d.manifest);
                if !manifest.is_file() {
                    return Err(config_err(format!("manifest {} does not exist", manifest.display())));
                }
                if let Some(r) = &d.remap {
                    let r = self.resolve(r);
                    if !r.is_file() {
                        return Err(config_err(format!("remap file {} does not exist", r.display())));
                    }
                }
            }
        }
        wrap(c.rv.validate())?;
        wrap(c.bev.validate())?;
        wrap(c.head.validate())?;
        let a = &c.augment;
        if !(a.scale_min > 0.0 && a.scale_max >= a.scale_min) || !(a.jitter_sigma >= 0.0) {
            return Err(config_err("augment needs 0 < scale_min <= scale_max and jitter_sigma >= 0"));
        }
        let e = &c.eval.bin_edges;
        if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) || e[0] < 0.0 {
            return Err(config_err("eval.bin_edges must be at least two ascending non-negative values"));
        }
        if c.eval.histogram_bins == 0 {
            return Err(config_err("eval.histogram_bins must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
num_classes = 2

[synthetic]
scans = 2
num_points = 100

[[synthetic.primitives]]
kind = "ground_annulus"
class = 0
r_min = 2.0
r_max = 20.0
z_min = -1.8
z_max = -1.6
weight = 1.0

[synthetic.scorer_a]
base_accuracy = 0.9

[synthetic.scorer_b]
base_accuracy = 0.8
"#;

    fn load(text: &str) -> anyhow::Result<LoadedConfig> {
        LoadedConfig::from_text(text.to_string(), PathBuf::new(), None)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = load(MINIMAL).unwrap().config;
        assert_eq!(c.head.neighbors, 15);
        assert_eq!(c.head.batch_size, 256);
        assert_eq!(c.rv.width, 2048);
        assert_eq!(c.bev.r_bins, 480);
        assert_eq!(c.eval.split, EvalSplit::Val);
    }

    #[test]
    fn seed_override() {
        let c = LoadedConfig::from_text(MINIMAL.to_string(), PathBuf::new(), Some(9)).unwrap();
        assert_eq!(c.config.seed, 9);
        assert!(c.seed_overridden);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            MINIMAL.replace("scans = 2", "scans = 0"),
            MINIMAL.replace("num_classes = 2", "num_classes = 1"),
            MINIMAL.replace("class = 0", "class = 5"),
            MINIMAL.replace("seed = 3", "seed = 3\nbogus = 1"),
            format!("{MINIMAL}\n[dataset]\nmanifest = \"nowhere.toml\"\n"),
            format!("{MINIMAL}\n[head]\ntau = 2.0\n"),
            format!("{MINIMAL}\n[eval]\nbin_edges = [10.0, 5.0]\n"),
        ];
        for text in cases {
            let err = load(&text).unwrap_err();
            assert!(err.downcast_ref::<ConfigError>().is_some(), "{err}");
        }
    }
}
