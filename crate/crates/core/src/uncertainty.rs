//! MC-dropout sampling, uncertainty decomposition and uncertainty-driven fusion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::{DropoutMode, HeteroscedasticOutput, Network};
use crate::rng::{derive_seed, tag};
use crate::synth::Target;

/// Default number of stochastic forward passes.
pub const DEFAULT_MC_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rppg,
    Ppg,
    Img,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rppg, Modality::Ppg, Modality::Img];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rppg => "rppg",
            Modality::Ppg => "ppg",
            Modality::Img => "img",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown modality {s:?} (expected rppg, ppg or img)")))
    }
}

/// `T` draws of `(mu_t, s_t)` for one modality and target, in normalised units.
#[derive(Debug, Clone, PartialEq)]
pub struct McSampleSet {
    modality: Modality,
    target: Target,
    samples: Vec<(f64, f64)>,
}

impl McSampleSet {
    pub fn new(modality: Modality, target: Target, samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::usage(format!("MC sample set needs T >= 2, got {}", samples.len())));
        }
        if samples.iter().any(|(m, s)| !m.is_finite() || !s.is_finite()) {
            return Err(Error::Numerical("non-finite MC sample".into()));
        }
        Ok(Self {
            modality,
            target,
            samples,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of the sampled predictive means.
    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|s| s.0).sum::<f64>() / self.len() as f64
    }

    pub fn uncertainty(&self) -> ModalityUncertainty {
        ModalityUncertainty {
            aleatoric: aleatoric(self),
            epistemic: epistemic(self),
        }
    }
}

/// Runs `t` dropout-active forward passes with sub-seeds derived from `seed`.
///
/// Returns one sample set per target, SBP first.
pub fn mc_sample(net: &Network, modality: Modality, input: &[f64], t: usize, seed: u64) -> Result<[McSampleSet; 2]> {
    if t < 2 {
        return Err(Error::usage(format!("MC sampling needs T >= 2, got {t}")));
    }
    let mut outs = Vec::with_capacity(t);
    for i in 0..t {
        let sub = derive_seed(seed, &[tag("mc"), i as u64]);
        let out = net.forward(input, DropoutMode::Sampled(sub))?;
        outs.push(HeteroscedasticOutput::from_raw(&out.raw)?);
    }
    let pick = |target: Target| {
        let k = target.index();
        McSampleSet::new(modality, target, outs.iter().map(|o| (o.mu()[k], o.log_var()[k])).collect())
    };
    Ok([pick(Target::Sbp)?, pick(Target::Dbp)?])
}

/// Mean predicted variance, `(1/T) sum exp(s_t)`.
pub fn aleatoric(set: &McSampleSet) -> f64 {
    set.samples.iter().map(|s| s.1.exp()).sum::<f64>() / set.len() as f64
}

/// Population variance of the sampled means, `(1/T) sum mu_t^2 - mean^2`.
///
/// Evaluated in the two-pass form on values shifted by the first sample, which is
/// algebraically identical, does not cancel catastrophically when the means are
/// large, and is exactly 0 when every sample agrees.
pub fn epistemic(set: &McSampleSet) -> f64 {
    let origin = set.samples[0].0;
    let n = set.len() as f64;
    let shift = set.samples.iter().map(|s| s.0 - origin).sum::<f64>() / n;
    set.samples.iter().map(|s| (s.0 - origin - shift).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityUncertainty {
    pub aleatoric: f64,
    pub epistemic: f64,
}

impl ModalityUncertainty {
    pub fn sum(&self) -> f64 {
        self.aleatoric + self.epistemic
    }
}

/// Sum of aleatoric and epistemic parts over exactly three modalities.
pub fn total_uncertainty(per_modality: &[ModalityUncertainty]) -> Result<f64> {
    if per_modality.len() != 3 {
        return Err(Error::usage(format!(
            "total uncertainty needs three modalities, got {}",
            per_modality.len()
        )));
    }
    Ok(per_modality.iter().map(ModalityUncertainty::sum).sum())
}

/// Validation-set mean uncertainties, indexed `[modality][target]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionContext {
    pub means: [[ModalityUncertainty; 2]; 3],
}

impl FusionContext {
    pub fn new(means: [[ModalityUncertainty; 2]; 3]) -> Result<Self> {
        let ok = means
            .iter()
            .flatten()
            .all(|m| m.aleatoric > 0.0 && m.epistemic > 0.0 && m.aleatoric.is_finite() && m.epistemic.is_finite());
        if !ok {
            return Err(Error::config("fusion context means must be finite and > 0"));
        }
        Ok(Self { means })
    }

    /// Averages per-sample uncertainties, given as `[modality][target] -> samples`.
    pub fn from_validation(samples: &[[Vec<ModalityUncertainty>; 2]; 3]) -> Result<Self> {
        let mut means = [[ModalityUncertainty::default(); 2]; 3];
        for (m, per_target) in samples.iter().enumerate() {
            for (t, list) in per_target.iter().enumerate() {
                if list.is_empty() {
                    return Err(Error::usage("fusion context needs validation samples for every modality"));
                }
                let n = list.len() as f64;
                means[m][t] = ModalityUncertainty {
                    aleatoric: list.iter().map(|u| u.aleatoric).sum::<f64>() / n,
                    epistemic: list.iter().map(|u| u.epistemic).sum::<f64>() / n,
                };
            }
        }
        Self::new(means)
    }

    /// SHA-256 of the JSON form, for audits that the context depends only on validation data.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("context serialises");
        hex::encode(Sha256::digest(json))
    }

    pub fn normalized(&self, modality: Modality, target: Target, u: ModalityUncertainty) -> f64 {
        u.sum() / self.means[modality.index()][target.index()].sum()
    }
}

/// `softmax(-log u)`.
///
/// Modalities with `u = 0` share all the weight (the limit of the formula); when
/// every `u` is zero the weights are uniform.
pub fn uda_weights(u: [f64; 3]) -> [f64; 3] {
    let zeros = u.iter().filter(|&&v| v == 0.0).count();
    if zeros > 0 {
        return u.map(|v| if v == 0.0 { 1.0 / zeros as f64 } else { 0.0 });
    }
    let logits = u.map(|v| -v.ln());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - max).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

/// Fusion result for one sample and one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedEstimate {
    /// Per-modality predictions in mmHg.
    pub predictions: [f64; 3],
    pub weights: [f64; 3],
    pub fused: f64,
    pub aleatoric_total: f64,
    pub epistemic_total: f64,
    pub total: f64,
}

pub fn uda_fuse(
    target: Target,
    predictions: [f64; 3],
    uncertainties: [ModalityUncertainty; 3],
    ctx: &FusionContext,
) -> Result<FusedEstimate> {
    if uncertainties.iter().any(|u| u.aleatoric < 0.0 || u.epistemic < 0.0 || !u.sum().is_finite()) {
        return Err(Error::usage("uncertainties must be finite and non-negative"));
    }
    let u = std::array::from_fn(|m| ctx.normalized(Modality::ALL[m], target, uncertainties[m]));
    let weights = uda_weights(u);
    let fused = weights.iter().zip(&predictions).map(|(w, p)| w * p).sum();
    Ok(FusedEstimate {
        predictions,
        weights,
        fused,
        aleatoric_total: uncertainties.iter().map(|u| u.aleatoric).sum(),
        epistemic_total: uncertainties.iter().map(|u| u.epistemic).sum(),
        total: total_uncertainty(&uncertainties)?,
    })
}

/// Arithmetic mean of the modality predictions.
pub fn mean_fuse(predictions: [f64; 3]) -> f64 {
    predictions.iter().sum::<f64>() / 3.0
}

/// Per-sample fusion for both targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPrediction {
    pub sbp: FusedEstimate,
    pub dbp: FusedEstimate,
}

impl FusedPrediction {
    pub fn get(&self, target: Target) -> &FusedEstimate {
        match target {
            Target::Sbp => &self.sbp,
            Target::Dbp => &self.dbp,
        }
    }
}

/// Indices of the `ceil(fraction * n)` smallest uncertainties, ascending, ties in input order.
pub fn triage_rank(uncertainties: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if uncertainties.is_empty() {
        return Err(Error::usage("triage needs at least one prediction"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::usage(format!("triage fraction must lie in (0, 1], got {fraction}")));
    }
    let keep = ((fraction * uncertainties.len() as f64).ceil() as usize).clamp(1, uncertainties.len());
    let mut order: Vec<usize> = (0..uncertainties.len()).collect();
    order.sort_by(|&a, &b| uncertainties[a].total_cmp(&uncertainties[b]));
    order.truncate(keep);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(samples: &[(f64, f64)]) -> McSampleSet {
        McSampleSet::new(Modality::Rppg, Target::Sbp, samples.to_vec()).unwrap()
    }

    #[test]
    fn hand_examples() {
        let l4 = 4f64.ln();
        assert!((aleatoric(&set(&[(0.0, l4), (1.0, l4)])) - 4.0).abs() < 1e-12);
        assert!((aleatoric(&set(&[(0.0, l4), (0.0, 6f64.ln())])) - 5.0).abs() < 1e-12);
        assert_eq!(epistemic(&set(&[(120.0, 0.0), (124.0, 0.0)])), 4.0);
        assert_eq!(epistemic(&set(&[(3.0, 0.0), (3.0, 1.0)])), 0.0);
        let u = |a, e| ModalityUncertainty { aleatoric: a, epistemic: e };
        assert_eq!(total_uncertainty(&[u(1.0, 2.0), u(3.0, 4.0), u(5.0, 6.0)]).unwrap(), 21.0);
        assert!(total_uncertainty(&[u(1.0, 2.0)]).is_err());
    }

    #[test]
    fn weights_hand_example() {
        let w = uda_weights([1.0, 2.0, 4.0]);
        for (a, b) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let fused: f64 = w.iter().zip([100.0, 120.0, 140.0]).map(|(w, p)| w * p).sum();
        assert!((fused - 780.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_uncertainty_limits() {
        assert_eq!(uda_weights([0.0, 1.0, 2.0]), [1.0, 0.0, 0.0]);
        assert_eq!(uda_weights([0.0, 1.0, 0.0]), [0.5, 0.0, 0.5]);
        let w = uda_weights([0.0; 3]);
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn triage_examples() {
        assert_eq!(triage_rank(&[3.0, 1.0, 2.0], 1.0 / 3.0).unwrap(), vec![1]);
        assert_eq!(triage_rank(&[3.0, 1.0, 2.0], 1.0).unwrap(), vec![1, 2, 0]);
        assert_eq!(triage_rank(&[1.0, 1.0, 0.5], 0.6).unwrap(), vec![2, 0]);
        assert!(triage_rank(&[], 0.5).is_err());
    }

    #[test]
    fn modality_names_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.name().parse::<Modality>().unwrap(), m);
        }
        assert!("face".parse::<Modality>().is_err());
    }
}
