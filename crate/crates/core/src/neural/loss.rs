//! Heteroscedastic likelihood and pulse reconstruction losses.

use crate::error::{Error, Result};
use crate::signals::{forward_difference, PulseTriplet};

/// Log-variance outputs are clamped to `[-LOG_VAR_CLAMP, LOG_VAR_CLAMP]`.
pub const LOG_VAR_CLAMP: f64 = 10.0;

/// Default pulse-loss weights for PPG, VPG and APG terms.
pub const PULSE_WEIGHTS: [f64; 3] = [5.0, 10.0, 15.0];

/// Two-target Gaussian head output in normalised BP units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroscedasticOutput {
    pub mu_sbp: f64,
    pub s_sbp: f64,
    pub mu_dbp: f64,
    pub s_dbp: f64,
}

impl HeteroscedasticOutput {
    /// Reads `[mu_sbp, s_sbp, mu_dbp, s_dbp]` from a raw head output.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        let [mu_sbp, s_sbp, mu_dbp, s_dbp] = <[f64; 4]>::try_from(raw)
            .map_err(|_| Error::usage(format!("heteroscedastic head needs 4 outputs, got {}", raw.len())))?;
        if !(mu_sbp.is_finite() && s_sbp.is_finite() && mu_dbp.is_finite() && s_dbp.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(Self {
            mu_sbp,
            s_sbp: clamp_s(s_sbp),
            mu_dbp,
            s_dbp: clamp_s(s_dbp),
        })
    }

    pub fn mu(&self) -> [f64; 2] {
        [self.mu_sbp, self.mu_dbp]
    }

    pub fn log_var(&self) -> [f64; 2] {
        [self.s_sbp, self.s_dbp]
    }
}

fn clamp_s(s: f64) -> f64 {
    s.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)
}

/// Single-target negative log-likelihood term `r^2 / (2 e^s) + s / 2`.
pub fn nll_term(residual: f64, s: f64) -> f64 {
    let s = clamp_s(s);
    residual * residual / (2.0 * s.exp()) + 0.5 * s
}

/// Mean over the batch of the summed SBP and DBP terms.
pub fn nll_loss(outputs: &[HeteroscedasticOutput], labels: &[[f64; 2]]) -> Result<f64> {
    if outputs.is_empty() || outputs.len() != labels.len() {
        return Err(Error::usage(format!(
            "nll needs a non-empty batch with one label per output ({} outputs, {} labels)",
            outputs.len(),
            labels.len()
        )));
    }
    let total: f64 = outputs
        .iter()
        .zip(labels)
        .map(|(o, y)| nll_term(y[0] - o.mu_sbp, o.s_sbp) + nll_term(y[1] - o.mu_dbp, o.s_dbp))
        .sum();
    Ok(total / outputs.len() as f64)
}

/// Per-sample NLL and its gradient with respect to the raw head output.
///
/// The log-variance gradient is zero where the clamp is active.
pub fn nll_raw_with_grad(raw: &[f64], label: [f64; 2]) -> Result<(f64, [f64; 4])> {
    let out = HeteroscedasticOutput::from_raw(raw)?;
    let mut grad = [0.0; 4];
    let mut loss = 0.0;
    for t in 0..2 {
        let mu = raw[2 * t];
        let s_raw = raw[2 * t + 1];
        let s = out.log_var()[t];
        let r = label[t] - mu;
        let inv = (-s).exp();
        loss += nll_term(r, s);
        grad[2 * t] = -r * inv;
        grad[2 * t + 1] = if s_raw.abs() <= LOG_VAR_CLAMP {
            0.5 - 0.5 * r * r * inv
        } else {
            0.0
        };
    }
    Ok((loss, grad))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `alpha * MSE(ppg) + beta * MSE(vpg) + gamma * MSE(apg)`, averaged over the batch.
pub fn pulse_loss(pred: &[PulseTriplet], truth: &[PulseTriplet], weights: [f64; 3]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::usage("pulse loss needs equal non-empty batches"));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        if p.ppg.len() != t.ppg.len() || p.vpg.len() != t.vpg.len() || p.apg.len() != t.apg.len() {
            return Err(Error::usage("pulse loss length mismatch"));
        }
        total += weights[0] * mse(&p.ppg, &t.ppg) + weights[1] * mse(&p.vpg, &t.vpg) + weights[2] * mse(&p.apg, &t.apg);
    }
    Ok(total / pred.len() as f64)
}

/// Pulse loss for one predicted waveform and its gradient with respect to that waveform.
pub fn pulse_loss_with_grad(pred: &[f64], truth: &[f64], weights: [f64; 3]) -> Result<(f64, Vec<f64>)> {
    let n = pred.len();
    if n != truth.len() {
        return Err(Error::usage(format!("pulse loss length mismatch: {n} vs {}", truth.len())));
    }
    if n < 3 {
        return Err(Error::degenerate("pulse loss needs at least 3 samples"));
    }
    let e0: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| a - b).collect();
    let e1 = forward_difference(&e0);
    let e2 = forward_difference(&e1);
    let sq = |e: &[f64]| e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64;
    let loss = weights[0] * sq(&e0) + weights[1] * sq(&e1) + weights[2] * sq(&e2);

    let mut g1: Vec<f64> = e1.iter().map(|v| 2.0 * weights[1] * v / e1.len() as f64).collect();
    let c2 = 2.0 * weights[2] / e2.len() as f64;
    for (j, v) in e2.iter().enumerate() {
        g1[j + 1] += c2 * v;
        g1[j] -= c2 * v;
    }
    let mut g0: Vec<f64> = e0.iter().map(|v| 2.0 * weights[0] * v / n as f64).collect();
    for (j, v) in g1.iter().enumerate() {
        g0[j + 1] += v;
        g0[j] -= v;
    }
    Ok((loss, g0))
}

/// Unweighted sum of the pulse term and the likelihood term.
pub fn joint_ppg_loss(pulse_term: f64, nll_term: f64) -> f64 {
    pulse_term + nll_term
}
