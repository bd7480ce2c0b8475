//! CSV report rows and their readers.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "fold,target,method,mae,corr,suc10,mase,bhs";
pub const FUSION_HEADER: &str =
    "sample_id,target,pred_rppg,pred_ppg,pred_img,w_rppg,w_ppg,w_img,fused,aleatoric_total,epistemic_total,total";
pub const CURVE_HEADER: &str = "x,suc10";
pub const SUBGROUP_HEADER: &str = "group,mae,mean_total_uncertainty";

/// One metrics line; `fold` is a fold index or `all` for pooled test predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub fold: String,
    pub target: String,
    pub method: String,
    pub mae: f64,
    pub corr: f64,
    pub suc10: f64,
    pub mase: f64,
    pub bhs: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub sample_id: String,
    pub target: String,
    pub pred_rppg: f64,
    pub pred_ppg: f64,
    pub pred_img: f64,
    pub w_rppg: f64,
    pub w_ppg: f64,
    pub w_img: f64,
    pub fused: f64,
    pub aleatoric_total: f64,
    pub epistemic_total: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub suc10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub group: String,
    pub mae: f64,
    pub mean_total_uncertainty: f64,
}

trait Finite {
    fn finite(&self) -> bool;
}

impl Finite for MetricsRow {
    fn finite(&self) -> bool {
        [self.mae, self.corr, self.suc10, self.mase].iter().all(|v| v.is_finite())
    }
}

impl Finite for FusionRow {
    fn finite(&self) -> bool {
        [
            self.pred_rppg,
            self.pred_ppg,
            self.pred_img,
            self.w_rppg,
            self.w_ppg,
            self.w_img,
            self.fused,
            self.aleatoric_total,
            self.epistemic_total,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl Finite for CurveRow {
    fn finite(&self) -> bool {
        self.x.is_finite() && self.suc10.is_finite()
    }
}

impl Finite for SubgroupRow {
    fn finite(&self) -> bool {
        self.mae.is_finite() && self.mean_total_uncertainty.is_finite()
    }
}

fn write_rows<T: Serialize>(rows: &[T], header: &str) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv");
    format!("{header}\n{body}")
}

fn parse_rows<T: DeserializeOwned + Finite>(text: &str, header: &str, what: &str) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| Error::parse(what, e))?;
    if found.iter().collect::<Vec<_>>().join(",") != header {
        return Err(Error::parse(what, format!("expected header {header:?}")));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            let row: T = row.map_err(|e| Error::parse(what, e))?;
            if !row.finite() {
                return Err(Error::parse(what, format!("non-finite value on data row {}", i + 1)));
            }
            Ok(row)
        })
        .collect()
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    write_rows(rows, METRICS_HEADER)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    parse_rows(text, METRICS_HEADER, "metrics csv")
}

pub fn fusion_to_csv(rows: &[FusionRow]) -> String {
    write_rows(rows, FUSION_HEADER)
}

pub fn parse_fusion_csv(text: &str) -> Result<Vec<FusionRow>> {
    parse_rows(text, FUSION_HEADER, "fusion csv")
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    write_rows(rows, CURVE_HEADER)
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>> {
    parse_rows(text, CURVE_HEADER, "curve csv")
}

pub fn subgroup_to_csv(rows: &[SubgroupRow]) -> String {
    write_rows(rows, SUBGROUP_HEADER)
}

pub fn parse_subgroup_csv(text: &str) -> Result<Vec<SubgroupRow>> {
    parse_rows(text, SUBGROUP_HEADER, "subgroup csv")
}
