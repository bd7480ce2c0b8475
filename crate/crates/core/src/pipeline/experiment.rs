//! Fold-level inference, fusion and a whole cross-validated experiment.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::PreparedRecord;
use super::train::{train_modality, TrainOutcome};
use super::{make_folds, sample_window, FoldPlan, LabelScaler, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, CurveRow, FusionRow, MeanRegressor, MetricsRow, SubgroupRow};
use crate::neural::Network;
use crate::rng::{derive_seed, rng_from, tag};
use crate::synth::{BpPair, Target};
use crate::uncertainty::{
    mc_sample, mean_fuse, uda_fuse, FusedPrediction, FusionContext, Modality, ModalityUncertainty,
};

/// Record indices of one fold's splits and the scaler fitted on its training split.
#[derive(Debug, Clone)]
pub struct FoldData<'a> {
    pub records: &'a [PreparedRecord],
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub scaler: LabelScaler,
}

impl<'a> FoldData<'a> {
    pub fn new(records: &'a [PreparedRecord], plan: &FoldPlan, fold: usize) -> Result<Self> {
        let spec = plan
            .folds
            .get(fold)
            .ok_or_else(|| Error::config(format!("fold {fold} does not exist")))?;
        let pick = |ids: &[u64]| -> Vec<usize> {
            let set: BTreeSet<u64> = ids.iter().copied().collect();
            (0..records.len()).filter(|&i| set.contains(&records[i].subject_id)).collect()
        };
        let train = pick(&spec.train);
        let labels: Vec<BpPair> = train.iter().map(|&i| records[i].labels).collect();
        Ok(Self {
            records,
            fold,
            scaler: LabelScaler::fit(&labels)?,
            train,
            validation: pick(&spec.validation),
            test: pick(&spec.test),
        })
    }

    pub fn train_labels(&self, target: Target) -> Vec<f64> {
        self.train.iter().map(|&i| self.records[i].labels.get(target)).collect()
    }
}

/// Window-averaged MC prediction for one record, in mmHg, with normalised-unit uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordPrediction {
    pub record: usize,
    pub mu: [f64; 2],
    pub uncertainty: [ModalityUncertainty; 2],
}

/// MC-dropout inference averaged over the configured number of windows per record.
pub fn predict_records(
    net: &Network,
    modality: Modality,
    fold: &FoldData,
    indices: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<RecordPrediction>> {
    let f = config.window_frames;
    let windows = config.samples_per_video.get(modality);
    let m = modality.index() as u64;
    indices
        .iter()
        .map(|&i| {
            let record = &fold.records[i];
            let mut rng = rng_from(seed, &[tag("inference-windows"), m, i as u64]);
            let mut mu = [0.0; 2];
            let mut unc = [ModalityUncertainty::default(); 2];
            for w in 0..windows {
                let start = sample_window(record.frames(), f, &mut rng)?;
                let input = record.input(modality, start, f)?;
                let mc_seed = derive_seed(seed, &[tag("mc"), m, i as u64, w as u64]);
                let sets = mc_sample(net, modality, &input.input, config.mc_samples, mc_seed)?;
                for (k, set) in sets.iter().enumerate() {
                    let u = set.uncertainty();
                    mu[k] += set.mean();
                    unc[k].aleatoric += u.aleatoric;
                    unc[k].epistemic += u.epistemic;
                }
            }
            let n = windows as f64;
            let mut out = RecordPrediction {
                record: i,
                mu: [0.0; 2],
                uncertainty: [ModalityUncertainty::default(); 2],
            };
            for k in 0..2 {
                out.mu[k] = fold.scaler.unscale(k, mu[k] / n)?;
                out.uncertainty[k] = ModalityUncertainty {
                    aleatoric: unc[k].aleatoric / n,
                    epistemic: unc[k].epistemic / n,
                };
            }
            Ok(out)
        })
        .collect()
}

/// Validation means of per-record uncertainties.
pub fn fusion_context(validation: &[Vec<RecordPrediction>; 3]) -> Result<FusionContext> {
    let samples: [[Vec<ModalityUncertainty>; 2]; 3] =
        std::array::from_fn(|m| std::array::from_fn(|k| validation[m].iter().map(|p| p.uncertainty[k]).collect()));
    FusionContext::from_validation(&samples)
}

/// Test-set outcome for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub fold: usize,
    pub record: usize,
    pub sample_id: String,
    pub group_label: String,
    pub truth: BpPair,
    /// Training-mean prediction of this sample's fold.
    pub baseline: [f64; 2],
    pub fused: FusedPrediction,
    pub mean_fused: [f64; 2],
}

/// Everything evaluation needs from one fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub scaler: LabelScaler,
    pub context: FusionContext,
    pub samples: Vec<SampleResult>,
}

/// Runs inference with trained networks and fuses the test predictions.
pub fn evaluate_fold(fold: &FoldData, nets: &[Network; 3], config: &TrainConfig, seed: u64) -> Result<FoldResult> {
    let infer_seed = derive_seed(seed, &[tag("inference"), fold.fold as u64]);
    let predict = |indices: &[usize]| -> Result<[Vec<RecordPrediction>; 3]> {
        let v = Modality::ALL
            .iter()
            .map(|&m| predict_records(&nets[m.index()], m, fold, indices, config, infer_seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(v.try_into().expect("three modalities"))
    };
    let context = fusion_context(&predict(&fold.validation)?)?;
    let test = predict(&fold.test)?;
    let baseline = [
        MeanRegressor::fit(&fold.train_labels(Target::Sbp))?.mean,
        MeanRegressor::fit(&fold.train_labels(Target::Dbp))?.mean,
    ];
    let mut samples = Vec::with_capacity(fold.test.len());
    for (j, &i) in fold.test.iter().enumerate() {
        let record = &fold.records[i];
        let fuse = |t: Target| {
            let k = t.index();
            let preds = std::array::from_fn(|m| test[m][j].mu[k]);
            let unc = std::array::from_fn(|m| test[m][j].uncertainty[k]);
            uda_fuse(t, preds, unc, &context).map(|e| (e, mean_fuse(preds)))
        };
        let (sbp, mean_sbp) = fuse(Target::Sbp)?;
        let (dbp, mean_dbp) = fuse(Target::Dbp)?;
        samples.push(SampleResult {
            fold: fold.fold,
            record: i,
            sample_id: record.sample_id(),
            group_label: record.group_label.clone(),
            truth: record.labels,
            baseline,
            fused: FusedPrediction { sbp, dbp },
            mean_fused: [mean_sbp, mean_dbp],
        });
    }
    Ok(FoldResult {
        fold: fold.fold,
        scaler: fold.scaler,
        context,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

/// Seed of the (fold, modality) training job.
pub fn job_seed(seed: u64, fold: usize, modality: Modality) -> u64 {
    derive_seed(seed, &[tag("train"), fold as u64, modality.index() as u64])
}

pub fn fold_plan(records: &[PreparedRecord], folds: usize, seed: u64) -> Result<FoldPlan> {
    let subjects: Vec<u64> = records.iter().map(|r| r.subject_id).collect();
    make_folds(&subjects, folds, seed)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub plan: FoldPlan,
    /// Training outcomes indexed `[fold][modality]`.
    pub training: Vec<[TrainOutcome; 3]>,
    pub folds: Vec<FoldResult>,
}

/// Trains all three modalities on every fold, then evaluates and fuses.
pub fn run_experiment(records: &[PreparedRecord], config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.train.validate()?;
    let plan = fold_plan(records, config.folds, config.seed)?;
    let fold_data = (0..config.folds)
        .map(|f| FoldData::new(records, &plan, f))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Modality)> = (0..config.folds)
        .flat_map(|f| Modality::ALL.map(|m| (f, m)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(f, m)| train_modality(m, &fold_data[f], &config.train, job_seed(config.seed, f, m), None))
        .collect::<Result<Vec<_>>>()?;
    let mut training = Vec::with_capacity(config.folds);
    let mut it = outcomes.into_iter();
    for _ in 0..config.folds {
        let trio: Vec<TrainOutcome> = it.by_ref().take(3).collect();
        training.push(<[TrainOutcome; 3]>::try_from(trio).expect("three per fold"));
    }
    let folds = fold_data
        .par_iter()
        .zip(&training)
        .map(|(fd, outs)| {
            let nets = [outs[0].network.clone(), outs[1].network.clone(), outs[2].network.clone()];
            evaluate_fold(fd, &nets, &config.train, config.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput { plan, training, folds })
}

/// Methods reported in the metrics table, in output order.
pub const METHODS: [&str; 6] = ["rppg", "ppg", "img", "mean-fuse", "uda-fuse", "mean-regressor"];

fn method_prediction(s: &SampleResult, method: &str, t: Target) -> f64 {
    let e = s.fused.get(t);
    match method {
        "rppg" => e.predictions[0],
        "ppg" => e.predictions[1],
        "img" => e.predictions[2],
        "mean-fuse" => s.mean_fused[t.index()],
        "uda-fuse" => e.fused,
        _ => s.baseline[t.index()],
    }
}

/// Evaluation tables over all folds.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metrics: Vec<MetricsRow>,
    pub fusion: Vec<FusionRow>,
    /// UDA confidence curve per target.
    pub curves: BTreeMap<Target, Vec<CurveRow>>,
    /// Subgroup rows per target.
    pub subgroups: BTreeMap<Target, Vec<SubgroupRow>>,
}

fn metrics_rows(fold: &str, samples: &[&SampleResult]) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for t in Target::ALL {
        let truth: Vec<f64> = samples.iter().map(|s| s.truth.get(t)).collect();
        let base: Vec<f64> = samples.iter().map(|s| s.baseline[t.index()]).collect();
        let base_mae = evaluation::mae(&base, &truth)?;
        for method in METHODS {
            let pred: Vec<f64> = samples.iter().map(|s| method_prediction(s, method, t)).collect();
            let m = evaluation::evaluate(&pred, &truth, base_mae)?;
            rows.push(MetricsRow {
                fold: fold.to_string(),
                target: t.name().to_string(),
                method: method.to_string(),
                mae: m.mae,
                corr: m.corr.value,
                suc10: m.suc10,
                mase: m.mase,
                bhs: m.bhs.to_string(),
            });
        }
    }
    Ok(rows)
}

/// Builds the metrics, fusion, confidence-curve and subgroup tables.
pub fn build_report(folds: &[FoldResult]) -> Result<Report> {
    let all: Vec<&SampleResult> = folds.iter().flat_map(|f| &f.samples).collect();
    if all.is_empty() {
        return Err(Error::usage("no test samples to report"));
    }
    let mut metrics = Vec::new();
    for f in folds {
        let samples: Vec<&SampleResult> = f.samples.iter().collect();
        metrics.extend(metrics_rows(&f.fold.to_string(), &samples)?);
    }
    metrics.extend(metrics_rows("all", &all)?);

    let mut fusion = Vec::with_capacity(all.len() * 2);
    for s in &all {
        for t in Target::ALL {
            let e = s.fused.get(t);
            fusion.push(FusionRow {
                sample_id: s.sample_id.clone(),
                target: t.name().to_string(),
                pred_rppg: e.predictions[0],
                pred_ppg: e.predictions[1],
                pred_img: e.predictions[2],
                w_rppg: e.weights[0],
                w_ppg: e.weights[1],
                w_img: e.weights[2],
                fused: e.fused,
                aleatoric_total: e.aleatoric_total,
                epistemic_total: e.epistemic_total,
                total: e.total,
            });
        }
    }

    let mut groups: Vec<String> = all.iter().map(|s| s.group_label.clone()).collect();
    groups.sort();
    groups.dedup();
    let labels: Vec<String> = all.iter().map(|s| s.group_label.clone()).collect();
    let grid = evaluation::default_confidence_grid();
    let mut curves = BTreeMap::new();
    let mut subgroups = BTreeMap::new();
    for t in Target::ALL {
        let pred: Vec<f64> = all.iter().map(|s| s.fused.get(t).fused).collect();
        let truth: Vec<f64> = all.iter().map(|s| s.truth.get(t)).collect();
        let unc: Vec<f64> = all.iter().map(|s| s.fused.get(t).total).collect();
        let curve = evaluation::confidence_curve(&pred, &truth, &unc, &grid)?;
        curves.insert(t, curve.points.iter().map(|&(x, suc10)| CurveRow { x, suc10 }).collect());
        let rows = evaluation::subgroup_report(&pred, &truth, &unc, &labels, &groups)?;
        subgroups.insert(
            t,
            rows.into_iter()
                .map(|g| SubgroupRow {
                    group: g.group,
                    mae: g.mae,
                    mean_total_uncertainty: g.mean_total_uncertainty,
                })
                .collect(),
        );
    }
    Ok(Report {
        metrics,
        fusion,
        curves,
        subgroups,
    })
}
