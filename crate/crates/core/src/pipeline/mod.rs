//! Subject-disjoint folds, oversampling, label scaling, window sampling, training
//! and inference for the three modalities.

pub mod data;
pub mod experiment;
pub mod train;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};
use crate::synth::BpPair;
use crate::uncertainty::Modality;

pub use data::{prepare_records, sample_id, ModalityInput, PreparedRecord};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutput, FoldData, RecordPrediction};
pub use train::{train_modality, EpochLog, TrainOutcome};

/// A value per modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerModality<T> {
    pub rppg: T,
    pub ppg: T,
    pub img: T,
}

impl<T: Copy> PerModality<T> {
    pub fn get(&self, m: Modality) -> T {
        match m {
            Modality::Rppg => self.rppg,
            Modality::Ppg => self.ppg,
            Modality::Img => self.img,
        }
    }
}

/// Strict bounds outside which a record is duplicated for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OversampleThresholds {
    pub sbp_low: f64,
    pub sbp_high: f64,
    pub dbp_low: f64,
    pub dbp_high: f64,
}

impl Default for OversampleThresholds {
    fn default() -> Self {
        Self {
            sbp_low: 110.0,
            sbp_high: 150.0,
            dbp_low: 70.0,
            dbp_high: 100.0,
        }
    }
}

impl OversampleThresholds {
    /// 2 when either pressure lies strictly outside its band, else 1.
    pub fn multiplicity(&self, bp: BpPair) -> usize {
        let outside = bp.sbp < self.sbp_low || bp.sbp > self.sbp_high || bp.dbp < self.dbp_low || bp.dbp > self.dbp_high;
        1 + usize::from(outside)
    }
}

/// Learning rates of [`TrainConfig::desk_scale`].
pub const DESK_SCALE_LEARNING_RATES: PerModality<f64> = PerModality {
    rppg: 3e-3,
    ppg: 1e-2,
    img: 3e-3,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rates: PerModality<f64>,
    /// Rates used instead of `learning_rates` when training starts from a checkpoint.
    pub finetune_learning_rates: PerModality<f64>,
    pub mc_samples: usize,
    pub window_frames: usize,
    pub oversample: OversampleThresholds,
    pub samples_per_video: PerModality<usize>,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub dropout: PerModality<f64>,
    /// Weights of the PPG, VPG and APG reconstruction terms.
    pub pulse_weights: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rates: PerModality {
                rppg: 1e-3,
                ppg: 1e-3,
                img: 1e-4,
            },
            finetune_learning_rates: PerModality {
                rppg: 1e-4,
                ppg: 1e-5,
                img: 1e-4,
            },
            mc_samples: 10,
            window_frames: 150,
            oversample: OversampleThresholds::default(),
            samples_per_video: PerModality {
                rppg: 60,
                ppg: 10,
                img: 3,
            },
            lr_decay_every: 10,
            lr_decay_factor: 0.5,
            dropout: PerModality {
                rppg: crate::neural::models::DEFAULT_DROPOUT_RPPG,
                ppg: crate::neural::models::DEFAULT_DROPOUT_PPG,
                img: crate::neural::models::DEFAULT_DROPOUT_IMAGE,
            },
            pulse_weights: crate::neural::loss::PULSE_WEIGHTS,
        }
    }
}

impl TrainConfig {
    /// Defaults with learning rates raised for small synthetic datasets.
    ///
    /// With about a hundred subjects an epoch is only a few dozen Adam steps, and the
    /// default rates leave every model far from converged after 30 epochs.
    pub fn desk_scale() -> Self {
        Self {
            learning_rates: DESK_SCALE_LEARNING_RATES,
            ..Self::default()
        }
    }

    /// Copy of this config that trains with the fine-tuning rates.
    pub fn for_finetuning(&self) -> Self {
        Self {
            learning_rates: self.finetune_learning_rates,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be > 0");
        }
        if self.batch_size == 0 || self.window_frames < 3 || self.lr_decay_every == 0 {
            return bad("batch_size, lr_decay_every must be > 0 and window_frames >= 3");
        }
        if self.mc_samples < 2 {
            return bad("mc_samples must be >= 2");
        }
        for m in Modality::ALL {
            let rates = [self.learning_rates.get(m), self.finetune_learning_rates.get(m)];
            if !rates.iter().all(|r| *r > 0.0 && r.is_finite()) {
                return bad("learning rates must be positive");
            }
            if self.samples_per_video.get(m) == 0 {
                return bad("samples_per_video must be > 0");
            }
            if !(0.0..1.0).contains(&self.dropout.get(m)) {
                return bad("dropout probabilities must lie in [0, 1)");
            }
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        let t = &self.oversample;
        if !(t.sbp_low < t.sbp_high && t.dbp_low < t.dbp_high) {
            return bad("oversampling thresholds must be ordered");
        }
        if self.pulse_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("pulse weights must be non-negative");
        }
        Ok(())
    }

    /// Learning rate after step decay.
    pub fn learning_rate(&self, modality: Modality, epoch: usize) -> f64 {
        self.learning_rates.get(modality) * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Subject ids per split for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fold {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("fold plan serialises");
        hex::encode(Sha256::digest(json))
    }
}

/// Partitions subjects into `fold_count` test sets; the remaining subjects of each
/// fold are split 80/20 into train and validation.
pub fn make_folds(subject_ids: &[u64], fold_count: usize, seed: u64) -> Result<FoldPlan> {
    let mut subjects = subject_ids.to_vec();
    subjects.sort_unstable();
    subjects.dedup();
    if fold_count < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {fold_count}")));
    }
    if subjects.len() < fold_count {
        return Err(Error::config(format!(
            "{} subjects cannot fill {fold_count} folds",
            subjects.len()
        )));
    }
    let mut rng = rng_from(seed, &[tag("folds")]);
    subjects.shuffle(&mut rng);
    let mut folds = Vec::with_capacity(fold_count);
    for f in 0..fold_count {
        let test: Vec<u64> = subjects.iter().skip(f).step_by(fold_count).copied().collect();
        let mut rest: Vec<u64> = subjects.iter().filter(|s| !test.contains(s)).copied().collect();
        rest.shuffle(&mut rng_from(seed, &[tag("validation"), f as u64]));
        let n_val = ((rest.len() as f64 * 0.2).round() as usize).clamp(1, rest.len().saturating_sub(1).max(1));
        let mut validation = rest.split_off(rest.len() - n_val);
        let mut train = rest;
        let mut test = test;
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        folds.push(Fold { train, validation, test });
    }
    Ok(FoldPlan { seed, folds })
}

/// Expands record indices by their oversampling multiplicity.
pub fn oversample(labels: &[BpPair], indices: &[usize], thresholds: &OversampleThresholds) -> Vec<usize> {
    indices
        .iter()
        .flat_map(|&i| std::iter::repeat_n(i, thresholds.multiplicity(labels[i])))
        .collect()
}

/// Uniform start index of an `f`-frame window in a `frames`-frame record.
pub fn sample_window(frames: usize, f: usize, rng: &mut impl Rng) -> Result<usize> {
    if frames < f {
        return Err(Error::degenerate(format!("record has {frames} frames, window needs {f}")));
    }
    Ok(rng.random_range(0..=frames - f))
}

/// Affine BP normalisation fitted on training labels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelScaler {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl LabelScaler {
    pub fn fit(labels: &[BpPair]) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::usage("label scaler needs at least two labels"));
        }
        let n = labels.len() as f64;
        let mut s = Self::default();
        for (k, get) in [|b: &BpPair| b.sbp, |b: &BpPair| b.dbp].iter().enumerate() {
            let mean = labels.iter().map(get).sum::<f64>() / n;
            let var = labels.iter().map(|b| (get(b) - mean).powi(2)).sum::<f64>() / n;
            s.mean[k] = mean;
            s.std[k] = var.sqrt();
        }
        if s.std.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::degenerate("training labels have zero variance"));
        }
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.std.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::usage("label scaler is not fitted"))
        }
    }

    pub fn scale(&self, bp: BpPair) -> Result<[f64; 2]> {
        self.check()?;
        Ok([(bp.sbp - self.mean[0]) / self.std[0], (bp.dbp - self.mean[1]) / self.std[1]])
    }

    /// Normalised value back to mmHg for target index `k`.
    pub fn unscale(&self, k: usize, value: f64) -> Result<f64> {
        self.check()?;
        Ok(value * self.std[k] + self.mean[k])
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scaler serialises");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplicity_rules() {
        let t = OversampleThresholds::default();
        let bp = |sbp, dbp| BpPair { sbp, dbp };
        assert_eq!(t.multiplicity(bp(120.0, 80.0)), 1);
        assert_eq!(t.multiplicity(bp(155.0, 80.0)), 2);
        assert_eq!(t.multiplicity(bp(110.0, 70.0)), 1);
        assert_eq!(t.multiplicity(bp(150.0, 100.0)), 1);
        assert_eq!(t.multiplicity(bp(100.0, 65.0)), 2);
    }

    #[test]
    fn folds_partition_subjects() {
        let ids: Vec<u64> = (0..10).collect();
        let plan = make_folds(&ids, 5, 1).unwrap();
        assert!(plan.folds.iter().all(|f| f.test.len() == 2));
        assert_eq!(plan, make_folds(&ids, 5, 1).unwrap());
        assert!(make_folds(&ids[..3], 5, 1).is_err());
    }

    #[test]
    fn unfitted_scaler() {
        let s = LabelScaler::default();
        assert!(matches!(s.scale(BpPair { sbp: 1.0, dbp: 1.0 }), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }
}
