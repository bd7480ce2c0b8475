//! Plane-orthogonal-to-skin (POS) pulse extraction.
//!
//! Each sliding window temporally normalises the RGB trace by its mean, projects it
//! onto the two axes orthogonal to the skin-tone direction, alpha-tunes the two
//! projections into one signal and overlap-adds the mean-removed result.

use super::{mean_std, zscore_in_place, RoiTraceSet, RppgWindow, CHANNELS};
use crate::error::{Error, Result};

/// Sliding-window length of the overlap-add projection.
pub const POS_WINDOW_SECONDS: f64 = 1.6;

const PROJECTION: [[f64; CHANNELS]; 2] = [[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]];

/// Extracts one z-scored pulse signal per region.
///
/// `window_seconds` is the POS sliding-window length. No band-pass filter is applied.
pub fn pos_project(traces: &RoiTraceSet, window_seconds: f64) -> Result<RppgWindow> {
    if !(window_seconds.is_finite() && window_seconds > 0.0) {
        return Err(Error::config(format!("POS window must be positive, got {window_seconds}")));
    }
    let frames = traces.frames();
    let win = ((window_seconds * traces.frame_rate()).ceil() as usize).max(2);
    if frames < win {
        return Err(Error::degenerate(format!(
            "POS window of {win} frames exceeds trace length {frames}"
        )));
    }
    let signals = (0..traces.roi_count())
        .map(|r| {
            let rgb: [&[f64]; CHANNELS] = std::array::from_fn(|c| traces.channel(r, c));
            let mut h = pos_single(rgb, win);
            zscore_in_place(&mut h);
            h
        })
        .collect();
    Ok(RppgWindow {
        signals,
        roi_labels: traces.roi_labels().to_vec(),
    })
}

fn pos_single(rgb: [&[f64]; CHANNELS], win: usize) -> Vec<f64> {
    let frames = rgb[0].len();
    let mut out = vec![0.0; frames];
    let mut s0 = vec![0.0; win];
    let mut s1 = vec![0.0; win];
    for start in 0..=frames - win {
        let means: [f64; CHANNELS] =
            std::array::from_fn(|c| rgb[c][start..start + win].iter().sum::<f64>() / win as f64);
        for t in 0..win {
            let cn: [f64; CHANNELS] = std::array::from_fn(|c| {
                if means[c] > 0.0 {
                    rgb[c][start + t] / means[c]
                } else {
                    0.0
                }
            });
            s0[t] = dot(&PROJECTION[0], &cn);
            s1[t] = dot(&PROJECTION[1], &cn);
        }
        let (_, sd0) = mean_std(&s0);
        let (_, sd1) = mean_std(&s1);
        let alpha = if sd1 > 0.0 { sd0 / sd1 } else { 0.0 };
        let h: Vec<f64> = s0.iter().zip(&s1).map(|(a, b)| a + alpha * b).collect();
        let (hm, _) = mean_std(&h);
        for (o, v) in out[start..start + win].iter_mut().zip(&h) {
            *o += v - hm;
        }
    }
    out
}

fn dot(a: &[f64; CHANNELS], b: &[f64; CHANNELS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modulated(frames: usize, fs: f64, f: f64, lag_s: f64, scale: f64) -> [Vec<f64>; 3] {
        let base = [120.0, 90.0, 70.0];
        let pbv = [0.33, 0.77, 0.53];
        std::array::from_fn(|c| {
            (0..frames)
                .map(|t| {
                    let time = t as f64 / fs - lag_s;
                    scale * base[c] * (1.0 + 0.01 * pbv[c] * (2.0 * std::f64::consts::PI * f * time).sin())
                })
                .collect()
        })
    }

    #[test]
    fn constant_trace_gives_zero_row() {
        let traces = RoiTraceSet::new(30.0, vec![[vec![100.0; 150], vec![80.0; 150], vec![60.0; 150]]]).unwrap();
        let w = pos_project(&traces, POS_WINDOW_SECONDS).unwrap();
        assert!(w.signals[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_rows_are_normalised() {
        let traces = RoiTraceSet::new(30.0, vec![modulated(150, 30.0, 1.2, 0.0, 1.0)]).unwrap();
        let w = pos_project(&traces, POS_WINDOW_SECONDS).unwrap();
        let (m, s) = mean_std(&w.signals[0]);
        assert!(m.abs() < 1e-9);
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn amplitude_invariance() {
        let a = RoiTraceSet::new(30.0, vec![modulated(150, 30.0, 1.1, 0.0, 1.0)]).unwrap();
        let b = RoiTraceSet::new(30.0, vec![modulated(150, 30.0, 1.1, 0.0, 3.7)]).unwrap();
        let wa = pos_project(&a, POS_WINDOW_SECONDS).unwrap();
        let wb = pos_project(&b, POS_WINDOW_SECONDS).unwrap();
        for (x, y) in wa.signals[0].iter().zip(&wb.signals[0]) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn short_trace_is_degenerate() {
        let traces = RoiTraceSet::new(30.0, vec![modulated(20, 30.0, 1.2, 0.0, 1.0)]).unwrap();
        assert!(matches!(pos_project(&traces, POS_WINDOW_SECONDS), Err(Error::DegenerateInput(_))));
    }
}
