//! The per-modality training loop with best-epoch selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::ModalityInput;
use super::experiment::FoldData;
use super::{oversample, sample_window, TrainConfig};
use crate::error::{Error, Result};
use crate::neural::loss::{nll_raw_with_grad, pulse_loss_with_grad};
use crate::neural::{Adam, DropoutMode, NetOutput, Network, OutputGrad};
use crate::rng::{derive_seed, rng_from, tag};
use crate::uncertainty::Modality;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: Network,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub epochs: Vec<EpochLog>,
}

struct Sample {
    input: ModalityInput,
    label: [f64; 2],
}

/// Loss and output gradient for one window: NLL, plus the pulse term for PPG.
fn sample_loss(out: &NetOutput, sample: &Sample, config: &TrainConfig) -> Result<(f64, OutputGrad)> {
    let (mut loss, g) = nll_raw_with_grad(&out.raw, sample.label)?;
    let pulse = match (&out.pulse, &sample.input.pulse_target) {
        (Some(pred), Some(truth)) => {
            let (l, g) = pulse_loss_with_grad(pred, truth, config.pulse_weights)?;
            loss += l;
            Some(g)
        }
        _ => None,
    };
    Ok((loss, OutputGrad { raw: g.to_vec(), pulse }))
}

fn build_sample(fold: &FoldData, modality: Modality, record: usize, start: usize, f: usize) -> Result<Sample> {
    let r = &fold.records[record];
    Ok(Sample {
        input: r.input(modality, start, f)?,
        label: fold.scaler.scale(r.labels)?,
    })
}

fn mean_loss(net: &Network, samples: &[Sample], config: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let out = net.forward(&s.input.input, DropoutMode::Off)?;
        total += sample_loss(&out, s, config)?.0;
    }
    Ok(total / samples.len() as f64)
}

/// Trains one modality on one fold and keeps the best-validation epoch.
pub fn train_modality(
    modality: Modality,
    fold: &FoldData,
    config: &TrainConfig,
    seed: u64,
    init: Option<&Network>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if fold.train.is_empty() || fold.validation.is_empty() {
        return Err(Error::config("fold needs non-empty train and validation splits"));
    }
    let f = config.window_frames;
    let m = modality.index() as u64;
    let spec = fold.records[fold.train[0]].model_spec(modality, config);
    let mut net = match init {
        Some(n) if *n.spec() == spec => n.clone(),
        Some(_) => return Err(Error::config("initial checkpoint architecture does not match this modality")),
        None => Network::new(spec, derive_seed(seed, &[tag("init"), m]))?,
    };
    let per_record = config.samples_per_video.get(modality);

    let mut val_rng = rng_from(seed, &[tag("validation-windows"), m]);
    let mut validation = Vec::with_capacity(fold.validation.len() * per_record);
    for &i in &fold.validation {
        for _ in 0..per_record {
            let start = sample_window(fold.records[i].frames(), f, &mut val_rng)?;
            validation.push(build_sample(fold, modality, i, start, f)?);
        }
    }

    let train_records = match modality {
        Modality::Img => fold.train.clone(),
        Modality::Rppg | Modality::Ppg => {
            let labels: Vec<_> = fold.records.iter().map(|r| r.labels).collect();
            oversample(&labels, &fold.train, &config.oversample)
        }
    };

    let mut adam = Adam::new();
    let mut best: Option<(Network, usize, f64)> = None;
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate(modality, epoch);
        let mut rng = rng_from(seed, &[tag("epoch"), m, epoch as u64]);
        let mut windows = Vec::with_capacity(train_records.len() * per_record);
        for &i in &train_records {
            for _ in 0..per_record {
                windows.push((i, sample_window(fold.records[i].frames(), f, &mut rng)?));
            }
        }
        windows.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (b, batch) in windows.chunks(config.batch_size).enumerate() {
            net.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (j, &(i, start)) in batch.iter().enumerate() {
                let sample = build_sample(fold, modality, i, start, f)?;
                let dropout = derive_seed(seed, &[tag("dropout"), m, epoch as u64, b as u64, j as u64]);
                let out = net.forward_train(&sample.input.input, DropoutMode::Sampled(dropout))?;
                let (loss, mut grad) = sample_loss(&out, &sample, config)?;
                grad.raw.iter_mut().for_each(|g| *g *= scale);
                if let Some(p) = grad.pulse.as_mut() {
                    p.iter_mut().for_each(|g| *g *= scale);
                }
                net.backward(&grad)?;
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "{modality} training diverged at epoch {}, batch {b}: loss {batch_loss}",
                    epoch + 1
                )));
            }
            epoch_loss += batch_loss;
            adam.step(net.params_mut(), lr);
        }
        let train_loss = epoch_loss / windows.len() as f64;
        let validation_loss = mean_loss(&net, &validation, config)?;
        if !validation_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "{modality} validation loss is {validation_loss} after epoch {}",
                epoch + 1
            )));
        }
        logs.push(EpochLog {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss,
            validation_loss,
        });
        if best.as_ref().is_none_or(|b| validation_loss < b.2) {
            best = Some((net.clone(), epoch + 1, validation_loss));
        }
    }
    let (network, best_epoch, best_validation_loss) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        network,
        best_epoch,
        best_validation_loss,
        epochs: logs,
    })
}
