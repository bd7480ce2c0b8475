//! The run manifest written by `ubp train`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ubp_core::pipeline::{EpochLog, FoldPlan};
use ubp_core::uncertainty::Modality;
use ubp_core::{Error, Result};

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRecord {
    pub fold: usize,
    pub modality: Modality,
    pub status: Status,
    pub seed: u64,
    /// Checkpoint stem relative to the run directory.
    pub checkpoint: String,
    pub best_epoch: Option<usize>,
    pub best_validation_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub status: Status,
    pub seed: u64,
    pub dataset_digest: String,
    pub fold_plan_digest: String,
    pub fold_plan: FoldPlan,
    /// Run directory of the checkpoints training started from, if any.
    pub init_from: Option<String>,
    pub config: RunConfig,
    pub jobs: Vec<JobRecord>,
}

pub fn checkpoint_stem(fold: usize, modality: Modality) -> String {
    format!("checkpoints/fold{fold}_{modality}")
}

pub fn parse_run_manifest(json: &str) -> Result<RunManifest> {
    let m: RunManifest = serde_json::from_str(json).map_err(|e| Error::parse("run manifest", e))?;
    if m.fold_plan.digest() != m.fold_plan_digest {
        return Err(Error::parse("run manifest", "fold plan does not match its digest"));
    }
    Ok(m)
}

impl RunManifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST);
        parse_run_manifest(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
    }

    /// Writes through a temporary file so readers never see a torn manifest.
    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(RUN_MANIFEST);
        let tmp = run_dir.join(format!("{RUN_MANIFEST}.tmp"));
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
