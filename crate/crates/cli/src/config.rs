//! Run configuration file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spine_enhance::model::NetSpec;
use spine_enhance::preprocess::PreprocessParams;
use spine_enhance::training::{PatchSpec, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Glob of training radiographs, relative to the config file.
    pub train: String,
    /// Glob of held-out radiographs used by `ablate`.
    pub eval: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub patch: PatchSpec,
    pub net: NetSpec,
    pub preprocess: PreprocessParams,
    pub train: TrainConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.net.validate()?;
        self.preprocess.validate()?;
        self.patch.validate()?;
        Ok(())
    }

    /// Resolves a glob from the config against the config's directory.
    pub fn resolve(&self, pattern: &str) -> String {
        if Path::new(pattern).is_absolute() {
            pattern.to_string()
        } else {
            self.base_dir.join(pattern).to_string_lossy().into_owned()
        }
    }

    /// Topology actually trained: the guidance branch follows the ablation flag.
    pub fn trained_spec(&self) -> NetSpec {
        NetSpec {
            guidance: self.net.guidance && self.train.ablation.guidance,
            ..self.net.clone()
        }
    }

    pub fn preprocessing(&self) -> Option<&PreprocessParams> {
        self.train.ablation.preprocessing.then_some(&self.preprocess)
    }
}
