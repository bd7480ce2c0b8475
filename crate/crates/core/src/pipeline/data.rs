//! Per-record preprocessing and per-window model inputs.

use crate::error::{Error, Result};
use crate::neural::{models, NetworkSpec};
use crate::signals::{build_st_map, pos_project, zscore, BlockGrid, RoiTraceSet, POS_WINDOW_SECONDS};
use crate::synth::{BpPair, SyntheticRecord};
use crate::uncertainty::Modality;

use super::TrainConfig;

/// A record with its rPPG signals extracted once for the whole recording.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub subject_id: u64,
    pub session: usize,
    pub group_label: String,
    pub labels: BpPair,
    frames: usize,
    /// Unnormalised POS output per region over the full recording.
    rppg: Vec<Vec<f64>>,
    blocks: RoiTraceSet,
    grid: BlockGrid,
    ppg: Vec<f64>,
    appearance: Vec<Vec<f64>>,
}

/// One network input, plus the pulse target for the PPG modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityInput {
    pub input: Vec<f64>,
    pub pulse_target: Option<Vec<f64>>,
}

impl PreparedRecord {
    pub fn new(record: &SyntheticRecord, grid: BlockGrid) -> Result<Self> {
        let frames = record.frames();
        if record.ppg_truth.len() != frames || record.appearance.len() != frames || record.blocks.frames() != frames {
            return Err(Error::config("record streams have inconsistent frame counts"));
        }
        if record.blocks.roi_count() != grid.blocks() {
            return Err(Error::config(format!(
                "record has {} blocks, grid {}x{} expects {}",
                record.blocks.roi_count(),
                grid.rows,
                grid.cols,
                grid.blocks()
            )));
        }
        let rppg = pos_project(&record.traces, POS_WINDOW_SECONDS)?.signals;
        Ok(Self {
            subject_id: record.subject.subject_id,
            session: record.session,
            group_label: record.subject.group_label.clone(),
            labels: record.labels,
            frames,
            rppg,
            blocks: record.blocks.clone(),
            grid,
            ppg: record.ppg_truth.clone(),
            appearance: record.appearance.clone(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn sample_id(&self) -> String {
        sample_id(self.subject_id, self.session)
    }

    /// Builds the input for the `f`-frame window starting at `start`.
    pub fn input(&self, modality: Modality, start: usize, f: usize) -> Result<ModalityInput> {
        if start + f > self.frames {
            return Err(Error::degenerate(format!(
                "window {start}..{} exceeds {} frames",
                start + f,
                self.frames
            )));
        }
        Ok(match modality {
            Modality::Rppg => ModalityInput {
                input: self.rppg.iter().flat_map(|row| zscore(&row[start..start + f])).collect(),
                pulse_target: None,
            },
            Modality::Ppg => ModalityInput {
                input: build_st_map(&self.blocks.window(start, f)?, self.grid)?.into_flat(),
                pulse_target: Some(zscore(&self.ppg[start..start + f])),
            },
            Modality::Img => ModalityInput {
                input: self.appearance[start + f / 2].clone(),
                pulse_target: None,
            },
        })
    }

    /// Network architecture for `modality` sized to this record's streams.
    pub fn model_spec(&self, modality: Modality, config: &TrainConfig) -> NetworkSpec {
        let f = config.window_frames;
        let p = config.dropout.get(modality);
        match modality {
            Modality::Rppg => models::rppg_model(self.rppg.len(), f, p),
            Modality::Ppg => models::ppg_model(3 * self.grid.blocks(), f, p),
            Modality::Img => models::image_model(self.appearance.first().map_or(0, Vec::len), p),
        }
    }
}

/// Identifier of a recording in reports, `s{subject:04}_{session}`.
pub fn sample_id(subject_id: u64, session: usize) -> String {
    format!("s{subject_id:04}_{session}")
}

pub fn prepare_records(records: &[SyntheticRecord], grid: BlockGrid) -> Result<Vec<PreparedRecord>> {
    records.iter().map(|r| PreparedRecord::new(r, grid)).collect()
}
