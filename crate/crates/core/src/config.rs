//! Flat `key = value` run configuration shared by every command.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are rejected by name so a typo cannot silently fall back to
//! a default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{EpvtError, Result};
use crate::eval::SweepConfig;
use crate::synth::{ArtifactKind, DomainSpec, Split};
use crate::train::{parse_bool, parse_num, TrainConfig};
use crate::vit::ModelConfig;

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Training records per domain, by domain ordinal.
    pub counts: [usize; ArtifactKind::COUNT],
    pub class_balance: f64,
    pub co_artifact_rate: f64,
    /// Validation size per domain relative to the training counts.
    pub val_fraction: f64,
    /// Size of the held-out target set; zero skips it.
    pub n_target: usize,
    /// Domain proportions of the target set.
    pub target_mix: [f64; ArtifactKind::COUNT],
    /// When set, data generation builds trap splits at this bias instead.
    pub trap_bias: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub export_pixels: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            counts: [24, 48, 16, 8, 28],
            class_balance: 0.5,
            co_artifact_rate: 0.15,
            val_fraction: 0.33,
            n_target: 0,
            target_mix: [0.45, 0.25, 0.15, 0.10, 0.05],
            trap_bias: None,
            n_train: 1000,
            n_val: 200,
            n_test: 400,
            export_pixels: false,
        }
    }
}

const COUNT_KEYS: [&str; ArtifactKind::COUNT] = ["n_dark_corner", "n_hair", "n_gel_bubble", "n_ruler", "n_clean"];
const MIX_KEYS: [&str; ArtifactKind::COUNT] = [
    "target_dark_corner",
    "target_hair",
    "target_gel_bubble",
    "target_ruler",
    "target_clean",
];

impl DataConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        if let Some(i) = COUNT_KEYS.iter().position(|k| *k == key) {
            self.counts[i] = parse_num(key, v)?;
            return Ok(true);
        }
        if let Some(i) = MIX_KEYS.iter().position(|k| *k == key) {
            self.target_mix[i] = parse_num(key, v)?;
            return Ok(true);
        }
        match key {
            "class_balance" => self.class_balance = parse_num(key, v)?,
            "co_artifact_rate" => self.co_artifact_rate = parse_num(key, v)?,
            "val_fraction" => self.val_fraction = parse_num(key, v)?,
            "n_target" => self.n_target = parse_num(key, v)?,
            "trap_bias" => self.trap_bias = Some(parse_num(key, v)?),
            "n_train" => self.n_train = parse_num(key, v)?,
            "n_val" => self.n_val = parse_num(key, v)?,
            "n_test" => self.n_test = parse_num(key, v)?,
            "export_pixels" => self.export_pixels = parse_bool(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Per-domain counts of a split drawn with the training proportions.
    pub fn val_counts(&self) -> [usize; ArtifactKind::COUNT] {
        self.counts.map(|c| {
            if c == 0 {
                0
            } else {
                ((c as f64 * self.val_fraction).round() as usize).max(1)
            }
        })
    }

    /// Target-set counts from `n_target` and `target_mix`.
    pub fn target_counts(&self) -> Result<[usize; ArtifactKind::COUNT]> {
        let total: f64 = self.target_mix.iter().sum();
        if !(total > 0.0) || self.target_mix.iter().any(|p| *p < 0.0) {
            return Err(EpvtError::InvalidConfig("target proportions must be nonnegative with a positive sum".into()));
        }
        Ok(self.target_mix.map(|p| (self.n_target as f64 * p / total).round() as usize))
    }

    pub fn domain_spec(&self, counts: [usize; ArtifactKind::COUNT], seed: u64, image_size: usize, split: Split) -> DomainSpec {
        DomainSpec {
            counts,
            class_balance: self.class_balance,
            seed,
            image_size,
            co_artifact_rate: self.co_artifact_rate,
            split,
        }
    }
}

/// File locations and evaluation target.
#[derive(Debug, Clone, PartialEq)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub eval_split: Split,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            checkpoint: None,
            eval_split: Split::Test,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub sweep_biases: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub paths: PathsConfig,
    present: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            sweep_biases: vec![0.0, 0.3, 0.5, 0.7, 0.9, 1.0],
            sweep_seeds: vec![0, 1, 2],
            paths: PathsConfig::default(),
            present: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                EpvtError::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", i + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !cfg.present.insert(key.to_string()) {
                return Err(EpvtError::InvalidConfig(format!("line {}: `{key}` is set twice", i + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EpvtError::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if self.model.set(key, v)? || self.train.set(key, v)? || self.data.set(key, v)? {
            return Ok(());
        }
        match key {
            "sweep_biases" => self.sweep_biases = parse_list(key, v)?,
            "sweep_seeds" => self.sweep_seeds = parse_list(key, v)?,
            "manifest" => self.paths.manifest = Some(PathBuf::from(v)),
            "checkpoint" => self.paths.checkpoint = Some(PathBuf::from(v)),
            "eval_split" => {
                self.paths.eval_split = v
                    .parse()
                    .map_err(|_| EpvtError::InvalidConfig(format!("`eval_split` must be train, val or test, got `{v}`")))?
            }
            _ => return Err(EpvtError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(b) = self.data.trap_bias {
            if !(0.0..=1.0).contains(&b) {
                return Err(EpvtError::InvalidConfig(format!("trap_bias {b} is outside [0, 1]")));
            }
        }
        if let Some(b) = self.sweep_biases.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(EpvtError::InvalidConfig(format!("sweep bias {b} is outside [0, 1]")));
        }
        Ok(())
    }

    /// Whether the file set `key` explicitly.
    pub fn is_set(&self, key: &str) -> bool {
        self.present.contains(key)
    }

    /// Fails on the first key of `keys` the file did not set.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        match keys.iter().find(|k| !self.is_set(k)) {
            Some(k) => Err(EpvtError::InvalidConfig(format!("missing required key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            n_train: self.data.n_train,
            n_val: self.data.n_val,
            n_test: self.data.n_test,
            seeds: self.sweep_seeds.clone(),
        }
    }
}
