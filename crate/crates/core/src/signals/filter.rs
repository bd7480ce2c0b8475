//! Zero-phase Butterworth band-pass used for plotting pulse signals.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(f0: f64, fs: f64, q: f64) -> Self {
        let (cos, alpha) = Self::prewarp(f0, fs, q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - cos) / 2.0 / a0, (1.0 - cos) / a0, (1.0 - cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(f0: f64, fs: f64, q: f64) -> Self {
        let (cos, alpha) = Self::prewarp(f0, fs, q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + cos) / 2.0 / a0, -(1.0 + cos) / a0, (1.0 + cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn prewarp(f0: f64, fs: f64, q: f64) -> (f64, f64) {
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        (w0.cos(), w0.sin() / (2.0 * q))
    }

    /// Direct form II transposed, with the state initialised to the steady state of
    /// a constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y0 = dc * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        let mut z1 = b1 * x0 - a1 * y0 + z2;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

// Pole-pair quality factors of a 4th-order Butterworth section cascade.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_4];

/// Band-pass `signal` between `low` and `high` Hz.
///
/// A 4th-order high-pass and a 4th-order low-pass Butterworth cascade are run
/// forward and backward over an odd-reflected extension of the signal.
pub fn bandpass(signal: &[f64], low: f64, high: f64, fs: f64) -> Result<Vec<f64>> {
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(Error::config(format!(
            "band {low}..{high} Hz invalid for sampling rate {fs} Hz"
        )));
    }
    if signal.len() < 2 {
        return Ok(signal.to_vec());
    }
    let sections: Vec<Biquad> = BUTTER4_Q
        .iter()
        .map(|&q| Biquad::highpass(low, fs, q))
        .chain(BUTTER4_Q.iter().map(|&q| Biquad::lowpass(high, fs, q)))
        .collect();

    let n = signal.len();
    let pad = ((3.0 * fs / low).ceil() as usize).min(n - 1);
    let first = signal[0];
    let last = signal[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_in_zero_out() {
        let y = bandpass(&[0.0; 300], 0.7, 3.0, 30.0).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invalid_band_is_config_error() {
        assert!(matches!(bandpass(&[1.0; 10], 3.0, 0.7, 30.0), Err(Error::Config(_))));
        assert!(matches!(bandpass(&[1.0; 10], 0.7, 15.0, 30.0), Err(Error::Config(_))));
        assert!(matches!(bandpass(&[1.0; 10], 0.0, 3.0, 30.0), Err(Error::Config(_))));
    }
}
