//! Dataset directories.
//!
//! ```text
//! <root>/manifest.json          generator config, seed, per-record digests
//! <root>/rec_00000/traces.csv   three-region traces (roi,channel,frame,value)
//!                  traces.json  frame-rate sidecar
//!                  blocks.csv   block traces for the spatio-temporal map
//!                  blocks.json
//!                  ppg.csv      frame,value
//!                  appearance.csv  frame,a0,a1,...
//!                  labels.json  subject_id, sbp, dbp, group_label
//!                  subject.json generator ground truth for the subject
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BpPair, GeneratorConfig, SyntheticRecord, SyntheticSubject};
use crate::error::{Error, Result};
use crate::signals::io::{manifest_to_json, parse_manifest, parse_traces_csv, traces_to_csv, TraceManifest};

pub const DATASET_MANIFEST: &str = "manifest.json";
const RECORD_FILES: [&str; 8] = [
    "traces.csv",
    "traces.json",
    "blocks.csv",
    "blocks.json",
    "ppg.csv",
    "appearance.csv",
    "labels.json",
    "subject.json",
];

/// Per-record label manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelManifest {
    pub subject_id: u64,
    pub sbp: f64,
    pub dbp: f64,
    pub group_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub dir: String,
    pub subject_id: u64,
    pub session: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_subjects: usize,
    pub generator: GeneratorConfig,
    pub records: Vec<RecordEntry>,
}

impl DatasetManifest {
    /// Digest over every record digest, identifying the dataset as a whole.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.digest.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn parse_dataset_manifest(json: &str) -> Result<DatasetManifest> {
    serde_json::from_str(json).map_err(|e| Error::parse("dataset manifest", e))
}

pub fn parse_labels(json: &str) -> Result<LabelManifest> {
    let l: LabelManifest = serde_json::from_str(json).map_err(|e| Error::parse("label manifest", e))?;
    if !(l.sbp.is_finite() && l.dbp.is_finite()) {
        return Err(Error::parse("label manifest", "non-finite blood pressure"));
    }
    Ok(l)
}

fn vector_csv(values: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame", "value"]).expect("in-memory write");
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Parses a `frame,value` CSV whose frames run 0, 1, 2, ... in order.
pub fn parse_ppg_csv(text: &str) -> Result<Vec<f64>> {
    let bad = |d: String| Error::parse("ppg csv", d);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(["frame", "value"]) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 2 || rec[0].parse::<usize>().ok() != Some(i) {
            return Err(bad(format!("row {i} malformed or out of order")));
        }
        let v: f64 = rec[1].parse().map_err(|e| bad(format!("row {i}: {e}")))?;
        if !v.is_finite() {
            return Err(bad(format!("row {i}: non-finite value")));
        }
        out.push(v);
    }
    Ok(out)
}

fn appearance_csv(rows: &[Vec<f64>]) -> String {
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("frame".to_string())
        .chain((0..dim).map(|d| format!("a{d}")))
        .collect();
    w.write_record(&header).expect("in-memory write");
    for (i, row) in rows.iter().enumerate() {
        let rec: Vec<String> = std::iter::once(i.to_string()).chain(row.iter().map(f64::to_string)).collect();
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Parses `frame,a0,...,a{D-1}` rows, one per frame in order.
pub fn parse_appearance_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let bad = |d: String| Error::parse("appearance csv", d);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let dim = header.len().saturating_sub(1);
    let expected = std::iter::once("frame".to_string()).chain((0..dim).map(|d| format!("a{d}")));
    if dim == 0 || header.iter().ne(expected) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != dim + 1 || rec[0].parse::<usize>().ok() != Some(i) {
            return Err(bad(format!("row {i} malformed or out of order")));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad(format!("row {i}: bad number")))?;
        out.push(row);
    }
    Ok(out)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn record_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in RECORD_FILES {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes `records` under `root` and returns the manifest that was stored.
pub fn write_dataset(
    root: &Path,
    records: &[SyntheticRecord],
    seed: u64,
    n_subjects: usize,
    generator: &GeneratorConfig,
) -> Result<DatasetManifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let name = format!("rec_{i:05}");
        let dir = root.join(&name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("traces.csv"), &traces_to_csv(&rec.traces))?;
        write(&dir.join("traces.json"), &manifest_to_json(&TraceManifest::describe(&rec.traces)))?;
        write(&dir.join("blocks.csv"), &traces_to_csv(&rec.blocks))?;
        write(&dir.join("blocks.json"), &manifest_to_json(&TraceManifest::describe(&rec.blocks)))?;
        write(&dir.join("ppg.csv"), &vector_csv(&rec.ppg_truth))?;
        write(&dir.join("appearance.csv"), &appearance_csv(&rec.appearance))?;
        let labels = LabelManifest {
            subject_id: rec.subject.subject_id,
            sbp: rec.labels.sbp,
            dbp: rec.labels.dbp,
            group_label: rec.subject.group_label.clone(),
        };
        write(&dir.join("labels.json"), &serde_json::to_string_pretty(&labels).expect("serialise"))?;
        write(&dir.join("subject.json"), &serde_json::to_string_pretty(&rec.subject).expect("serialise"))?;
        entries.push(RecordEntry {
            dir: name,
            subject_id: rec.subject.subject_id,
            session: rec.session,
            digest: record_digest(&dir)?,
        });
    }
    let manifest = DatasetManifest {
        seed,
        n_subjects,
        generator: generator.clone(),
        records: entries,
    };
    write(
        &root.join(DATASET_MANIFEST),
        &serde_json::to_string_pretty(&manifest).expect("serialise"),
    )?;
    Ok(manifest)
}

pub fn read_dataset_manifest(root: &Path) -> Result<DatasetManifest> {
    parse_dataset_manifest(&read(&root.join(DATASET_MANIFEST))?)
}

/// Loads every record listed in the manifest, verifying digests.
pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, Vec<SyntheticRecord>)> {
    let manifest = read_dataset_manifest(root)?;
    let records = manifest
        .records
        .iter()
        .map(|entry| read_record(&root.join(&entry.dir), entry))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

fn read_record(dir: &Path, entry: &RecordEntry) -> Result<SyntheticRecord> {
    if entry.dir.contains(['/', '\\']) || entry.dir.starts_with('.') {
        return Err(Error::parse("dataset manifest", format!("suspicious record dir {:?}", entry.dir)));
    }
    let digest = record_digest(dir)?;
    if digest != entry.digest {
        return Err(Error::Integrity {
            path: PathBuf::from(dir),
            detail: "record digest does not match manifest".into(),
        });
    }
    let traces = parse_traces_csv(
        &read(&dir.join("traces.csv"))?,
        &parse_manifest(&read(&dir.join("traces.json"))?)?,
    )?;
    let blocks = parse_traces_csv(
        &read(&dir.join("blocks.csv"))?,
        &parse_manifest(&read(&dir.join("blocks.json"))?)?,
    )?;
    let ppg_truth = parse_ppg_csv(&read(&dir.join("ppg.csv"))?)?;
    let appearance = parse_appearance_csv(&read(&dir.join("appearance.csv"))?)?;
    let labels = parse_labels(&read(&dir.join("labels.json"))?)?;
    let subject: SyntheticSubject = serde_json::from_str(&read(&dir.join("subject.json"))?)
        .map_err(|e| Error::parse("subject manifest", e))?;
    if ppg_truth.len() != traces.frames() || appearance.len() != traces.frames() || blocks.frames() != traces.frames() {
        return Err(Error::parse(
            "record",
            format!("{}: frame counts disagree between files", dir.display()),
        ));
    }
    if labels.subject_id != entry.subject_id || subject.subject_id != entry.subject_id {
        return Err(Error::parse("record", format!("{}: subject id mismatch", dir.display())));
    }
    Ok(SyntheticRecord {
        subject,
        session: entry.session,
        traces,
        blocks,
        ppg_truth,
        appearance,
        labels: BpPair {
            sbp: labels.sbp,
            dbp: labels.dbp,
        },
    })
}
