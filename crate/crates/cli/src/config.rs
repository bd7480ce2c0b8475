//! The run configuration file.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use ubp_core::pipeline::TrainConfig;
use ubp_core::synth::GeneratorConfig;
use ubp_core::uncertainty::Modality;
use ubp_core::{Error, Result};

/// Environment variable consulted when neither the flags nor the config set a seed.
pub const SEED_ENV: &str = "UBP_SEED";

/// Settings shared by every command. Paths are relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub subjects: usize,
    pub folds: usize,
    pub dataset_dir: PathBuf,
    pub run_dir: PathBuf,
    pub modalities: Vec<Modality>,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            subjects: 100,
            folds: 5,
            dataset_dir: "dataset".into(),
            run_dir: "run".into(),
            modalities: Modality::ALL.to_vec(),
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    /// JSON for `.json` files, TOML otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

pub fn parse_run_config(text: &str, format: ConfigFormat) -> Result<RunConfig> {
    let cfg: RunConfig = match format {
        ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?,
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.folds < 2 {
            return Err(Error::config("folds must be at least 2"));
        }
        if self.subjects < self.folds.max(5) {
            return Err(Error::config(format!(
                "{} subjects are too few for {} folds (need at least {})",
                self.subjects,
                self.folds,
                self.folds.max(5)
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::config("at least one modality is required"));
        }
        for p in [&self.dataset_dir, &self.run_dir] {
            check_relative(p)?;
        }
        Ok(())
    }

    /// The seed that will actually be used: config value, then `UBP_SEED`, then 0.
    pub fn resolve_seed(&mut self, env_value: Option<&str>) -> Result<u64> {
        let seed = match (self.seed, env_value) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
            (None, None) => 0,
        };
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Rejects absolute paths and parent-directory components.
pub fn check_relative(p: &Path) -> Result<()> {
    if p.as_os_str().is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err(Error::config(format!(
            "path {} must be relative to the working directory",
            p.display()
        )));
    }
    Ok(())
}
