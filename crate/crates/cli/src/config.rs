use std::path::{Path, PathBuf};

use amtnet::dataset::{AuxFactor, SegmentConfig};
use amtnet::pipeline::DeskSpec;
use amtnet::signal::{FeatureConfig, FeatureKind};
use amtnet::train::TrainConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Where the data comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus directory; falls back to `AMT_DATA_ROOT`.
    pub root: Option<PathBuf>,
    /// Metadata manifest; defaults to `<root>/metadata.csv`.
    pub metadata: Option<PathBuf>,
    /// Split manifest (TOML); defaults to the built-in ShipsEar split.
    pub split: Option<PathBuf>,
    /// Use generated recordings instead of a corpus.
    pub synthetic: bool,
    /// Seed of the generated recordings (independent of training seeds).
    pub synthetic_seed: u64,
}

/// The full configuration tree. Every key is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub feature: FeatureKind,
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub segments: SegmentConfig,
    pub train: TrainConfig,
    pub synthetic: DeskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![123, 3407],
            feature: FeatureKind::Cqt,
            data: DataConfig::default(),
            features: FeatureConfig::default(),
            segments: SegmentConfig::default(),
            train: TrainConfig::default(),
            synthetic: DeskSpec::default(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub feature: Option<FeatureKind>,
    pub factor: Option<AuxFactor>,
    pub epochs: Option<usize>,
    pub no_adversarial: bool,
    pub synthetic: bool,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Defaults, then the file, then the flags.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seeds = vec![s];
        }
        if let Some(k) = overrides.feature {
            cfg.feature = k;
        }
        if let Some(f) = overrides.factor {
            cfg.train.factor = f;
        }
        if let Some(e) = overrides.epochs {
            cfg.train.epochs = e;
        }
        if overrides.no_adversarial {
            cfg.train.adversarial = false;
        }
        if overrides.synthetic {
            cfg.data.synthetic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reports every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.seeds.is_empty() {
            problems.push("seeds: at least one seed is required".to_string());
        }
        problems.extend(self.train.problems().into_iter().map(|p| format!("train: {p}")));
        if let Err(e) = self.features.validate() {
            problems.push(format!("features: {e}"));
        }
        if let Err(e) = self.segments.validate() {
            problems.push(format!("segments: {e}"));
        }
        if let Err(e) = self.synthetic.synthetic.validate() {
            problems.push(format!("synthetic: {e}"));
        }
        if let Err(e) = self.synthetic.segments.validate() {
            problems.push(format!("synthetic.segments: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(UsageError(format!("invalid configuration:\n  {}", problems.join("\n  "))).into())
        }
    }

    /// Feature settings that match the data source.
    pub fn feature_config(&self) -> FeatureConfig {
        if self.data.synthetic {
            FeatureConfig { sample_rate: self.synthetic.synthetic.sample_rate, ..FeatureConfig::desk() }
        } else {
            self.features.clone()
        }
    }

    pub fn segment_config(&self) -> SegmentConfig {
        if self.data.synthetic {
            self.synthetic.segments
        } else {
            self.segments
        }
    }

    pub fn data_root(&self) -> Result<PathBuf> {
        if let Some(r) = &self.data.root {
            return Ok(r.clone());
        }
        match std::env::var_os("AMT_DATA_ROOT") {
            Some(r) => Ok(PathBuf::from(r)),
            None => Err(UsageError("no corpus: set data.root, AMT_DATA_ROOT, or pass --synthetic".into()).into()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Writes the resolved configuration to `<dir>/config.toml`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("config.toml"), self.to_toml()).context("writing resolved config")?;
        Ok(())
    }
}
