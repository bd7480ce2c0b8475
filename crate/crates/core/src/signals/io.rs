//! On-disk form of a [`RoiTraceSet`]: a long-format CSV with header
//! `roi,channel,frame,value` plus a JSON sidecar carrying the frame rate.

use serde::{Deserialize, Serialize};

use super::{RoiTraceSet, CHANNELS};
use crate::error::{Error, Result};

const CHANNEL_NAMES: [&str; CHANNELS] = ["r", "g", "b"];
const HEADER: [&str; 4] = ["roi", "channel", "frame", "value"];

/// Sidecar manifest for a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceManifest {
    pub frame_rate: f64,
    pub roi_count: usize,
    pub frames: usize,
    #[serde(default)]
    pub roi_labels: Vec<String>,
}

impl TraceManifest {
    pub fn describe(traces: &RoiTraceSet) -> Self {
        Self {
            frame_rate: traces.frame_rate(),
            roi_count: traces.roi_count(),
            frames: traces.frames(),
            roi_labels: traces.roi_labels().to_vec(),
        }
    }
}

pub fn parse_manifest(json: &str) -> Result<TraceManifest> {
    serde_json::from_str(json).map_err(|e| Error::parse("trace manifest", e))
}

pub fn manifest_to_json(m: &TraceManifest) -> String {
    serde_json::to_string_pretty(m).expect("manifest serialises")
}

pub fn traces_to_csv(traces: &RoiTraceSet) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in 0..traces.roi_count() {
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            for (t, v) in traces.channel(r, c).iter().enumerate() {
                w.write_record([r.to_string(), name.to_string(), t.to_string(), v.to_string()])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Parses a trace CSV against its manifest.
///
/// Rows may come in any order, but every `(roi, channel, frame)` cell must appear
/// exactly once.
pub fn parse_traces_csv(csv_text: &str, manifest: &TraceManifest) -> Result<RoiTraceSet> {
    let bad = |detail: String| Error::parse("trace csv", detail);
    let expected = manifest
        .roi_count
        .checked_mul(CHANNELS)
        .and_then(|v| v.checked_mul(manifest.frames))
        .ok_or_else(|| bad("manifest dimensions overflow".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(bad(format!("unexpected header {:?}", header)));
    }

    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 4 {
            return Err(bad(format!("row {line}: expected 4 fields, got {}", rec.len())));
        }
        let roi: usize = rec[0].trim().parse().map_err(|e| bad(format!("row {line} roi: {e}")))?;
        let channel = CHANNEL_NAMES
            .iter()
            .position(|n| *n == rec[1].trim())
            .ok_or_else(|| bad(format!("row {line}: unknown channel {:?}", &rec[1])))?;
        let frame: usize = rec[2].trim().parse().map_err(|e| bad(format!("row {line} frame: {e}")))?;
        let value: f64 = rec[3].trim().parse().map_err(|e| bad(format!("row {line} value: {e}")))?;
        if roi >= manifest.roi_count || frame >= manifest.frames {
            return Err(bad(format!("row {line}: cell ({roi}, {frame}) outside manifest bounds")));
        }
        rows.push(((roi * CHANNELS + channel) * manifest.frames + frame, value));
        if rows.len() > expected {
            return Err(bad(format!("more than {expected} rows")));
        }
    }
    if rows.len() != expected {
        return Err(bad(format!("{} rows, expected {expected}", rows.len())));
    }

    let mut data = vec![0.0; expected];
    let mut seen = vec![false; expected];
    for (idx, v) in rows {
        if std::mem::replace(&mut seen[idx], true) {
            return Err(bad(format!("duplicate cell at flat index {idx}")));
        }
        data[idx] = v;
    }
    let set = RoiTraceSet::from_flat(manifest.frame_rate, manifest.roi_count, manifest.frames, data)?;
    if manifest.roi_labels.is_empty() {
        Ok(set)
    } else {
        set.with_labels(manifest.roi_labels.clone())
    }
}
