//! Accuracy metrics, BHS grading, baselines, confidence curves and subgroup reports.

pub mod plot;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::triage_rank;

pub use report::{CurveRow, FusionRow, MetricsRow, SubgroupRow};

/// Absolute error threshold used by Suc10, in mmHg.
pub const SUC_THRESHOLD: f64 = 10.0;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::usage(format!(
            "metrics need equal non-empty inputs ({} predictions, {} labels)",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Percentage of predictions with absolute error strictly below 10 mmHg.
pub fn suc10(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| (*p - *t).abs() < SUC_THRESHOLD).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// Model MAE as a percentage of the baseline MAE.
pub fn mase(model_mae: f64, baseline_mae: f64) -> Result<f64> {
    if !(baseline_mae > 0.0) {
        return Err(Error::usage(format!("baseline MAE must be > 0, got {baseline_mae}")));
    }
    Ok(100.0 * model_mae / baseline_mae)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    /// Set when the predictions have zero variance; `value` is then 0.
    pub degenerate: bool,
}

pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check_pair(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::usage("correlation needs at least two samples"));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    // Constant vectors are detected directly: the rounded mean can leave tiny nonzero deviations.
    let constant = |x: &[f64]| x.iter().all(|&v| v == x[0]);
    if syy == 0.0 || constant(truth) {
        return Err(Error::usage("correlation undefined: labels have zero variance"));
    }
    if sxx == 0.0 || constant(pred) {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Ranks starting at 1, ties receiving their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (ra, rb) = (ranks(a), ranks(b));
    match pearson(&ra, &rb) {
        Ok(c) => Ok(c.value),
        Err(_) if a.len() >= 2 => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    D,
    C,
    B,
    A,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Grade::A => "A",
            Grade::B => "B",
            Grade::C => "C",
            Grade::D => "D",
        };
        f.write_str(s)
    }
}

/// BHS-style grade from a Suc10 percentage.
pub fn bhs_grade(suc10_value: f64) -> Grade {
    match suc10_value {
        v if v >= 85.0 => Grade::A,
        v if v >= 75.0 => Grade::B,
        v if v >= 65.0 => Grade::C,
        _ => Grade::D,
    }
}

/// Predicts the training-set mean for every sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRegressor {
    pub mean: f64,
}

impl MeanRegressor {
    pub fn fit(train: &[f64]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::usage("mean regressor needs training labels"));
        }
        Ok(Self {
            mean: train.iter().sum::<f64>() / train.len() as f64,
        })
    }

    pub fn predict(&self, n: usize) -> Vec<f64> {
        vec![self.mean; n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMetrics {
    pub mae: f64,
    pub corr: Correlation,
    pub suc10: f64,
    pub mase: f64,
    pub bhs: Grade,
}

pub fn evaluate(pred: &[f64], truth: &[f64], baseline_mae: f64) -> Result<TargetMetrics> {
    let m = mae(pred, truth)?;
    let s = suc10(pred, truth)?;
    Ok(TargetMetrics {
        mae: m,
        corr: pearson(pred, truth)?,
        suc10: s,
        mase: mase(m, baseline_mae)?,
        bhs: bhs_grade(s),
    })
}

/// `0.05, 0.10, ..., 1.00`.
pub fn default_confidence_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceCurve {
    pub points: Vec<(f64, f64)>,
}

impl ConfidenceCurve {
    pub fn at(&self, x: f64) -> Option<f64> {
        self.points.iter().find(|p| (p.0 - x).abs() < 1e-12).map(|p| p.1)
    }
}

/// Suc10 of the least-uncertain fraction `x` of the predictions, for each `x` in `grid`.
pub fn confidence_curve(pred: &[f64], truth: &[f64], uncertainty: &[f64], grid: &[f64]) -> Result<ConfidenceCurve> {
    check_pair(pred, truth)?;
    if uncertainty.len() != pred.len() {
        return Err(Error::usage("one uncertainty per prediction required"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::usage("confidence grid must be strictly increasing"));
    }
    let points = grid
        .iter()
        .map(|&x| {
            let keep = triage_rank(uncertainty, x)?;
            let p: Vec<f64> = keep.iter().map(|&i| pred[i]).collect();
            let t: Vec<f64> = keep.iter().map(|&i| truth[i]).collect();
            Ok((x, suc10(&p, &t)?))
        })
        .collect::<Result<_>>()?;
    Ok(ConfidenceCurve { points })
}

/// Centred moving average; the window shrinks at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub group: String,
    pub count: usize,
    pub mae: f64,
    pub mean_total_uncertainty: f64,
}

/// Per-group MAE and mean total uncertainty, in the order of `groups`.
pub fn subgroup_report(
    pred: &[f64],
    truth: &[f64],
    uncertainty: &[f64],
    labels: &[String],
    groups: &[String],
) -> Result<Vec<GroupStats>> {
    check_pair(pred, truth)?;
    if uncertainty.len() != pred.len() || labels.len() != pred.len() {
        return Err(Error::usage("one uncertainty and one group label per prediction required"));
    }
    if groups.is_empty() {
        return Err(Error::usage("subgroup report needs at least one group"));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = groups.iter().map(|g| (g.as_str(), Vec::new())).collect();
    for (i, label) in labels.iter().enumerate() {
        members
            .get_mut(label.as_str())
            .ok_or_else(|| Error::usage(format!("sample {i} has unknown group label {label:?}")))?
            .push(i);
    }
    groups
        .iter()
        .map(|g| {
            let idx = &members[g.as_str()];
            if idx.is_empty() {
                return Err(Error::usage(format!("group {g:?} has no samples")));
            }
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
            Ok(GroupStats {
                group: g.clone(),
                count: idx.len(),
                mae: mae(&p, &t)?,
                mean_total_uncertainty: idx.iter().map(|&i| uncertainty[i]).sum::<f64>() / idx.len() as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(mae(&[100.0, 120.0], &[110.0, 110.0]).unwrap(), 10.0);
        let truth = [100.0; 4];
        assert_eq!(suc10(&[105.0, 115.0, 91.0, 110.0], &truth).unwrap(), 50.0);
        assert_eq!(bhs_grade(64.999), Grade::D);
        assert_eq!(bhs_grade(85.0), Grade::A);
        assert_eq!(mase(3.0, 3.0).unwrap(), 100.0);
        assert!(mase(1.0, 0.0).is_err());
        assert!(mae(&[1.0], &[]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let t = [1.0, 2.0, 4.0, 3.0];
        assert!((pearson(&t, &t).unwrap().value - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &t).unwrap().value + 1.0).abs() < 1e-15);
        let flat = pearson(&[2.0; 4], &t).unwrap();
        assert!(flat.degenerate && flat.value == 0.0);
        assert!(pearson(&t, &[1.0; 4]).is_err());
    }

    #[test]
    fn spearman_with_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn moving_average_edges() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 5), vec![2.0, 2.5, 3.0, 3.5, 4.0]);
    }

    #[test]
    fn subgroup_errors() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let r = subgroup_report(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 3.0], &s(&["a", "a"]), &s(&["a"])).unwrap();
        assert_eq!(r[0].mae, 1.5);
        assert_eq!(r[0].mean_total_uncertainty, 2.0);
        assert!(subgroup_report(&[1.0], &[0.0], &[1.0], &s(&["b"]), &s(&["a"])).is_err());
        assert!(subgroup_report(&[1.0], &[0.0], &[1.0], &s(&["a"]), &[]).is_err());
    }
}
