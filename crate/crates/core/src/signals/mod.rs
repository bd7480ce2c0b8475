//! Pulse-signal extraction from multi-region RGB traces.
//!
//! Inputs are per-region mean RGB traces (one row per region and channel).
//! Three model inputs are derived from them:
//!
//! * [`RppgWindow`]: one POS pulse signal per facial region, z-scored per row.
//! * [`SpatioTemporalMap`]: per-block RGB time series, z-scored per block and channel.
//! * [`PulseTriplet`]: a pulse waveform with its first and second forward differences.
//!
//! [`bandpass`] exists for visualisation only. Nothing on a model input path filters.

mod filter;
pub mod io;
mod pos;

pub use filter::bandpass;
pub use pos::{pos_project, POS_WINDOW_SECONDS};

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of colour channels in every trace.
pub const CHANNELS: usize = 3;

/// Region names used for the three-region rPPG layout.
pub const DEFAULT_ROI_LABELS: [&str; 3] = ["cheek", "inner-cheek", "forehead"];

/// Mean RGB per region per frame.
///
/// Values are stored region-major, then channel, then frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTraceSet {
    roi_count: usize,
    frame_rate: f64,
    frames: usize,
    roi_labels: Vec<String>,
    data: Vec<f64>,
}

impl RoiTraceSet {
    /// Builds a trace set from `traces[roi][channel][frame]`.
    pub fn new(frame_rate: f64, traces: Vec<[Vec<f64>; CHANNELS]>) -> Result<Self> {
        let roi_count = traces.len();
        let frames = traces.first().map(|t| t[0].len()).unwrap_or(0);
        let mut data = Vec::with_capacity(roi_count * CHANNELS * frames);
        for (r, roi) in traces.iter().enumerate() {
            for (c, ch) in roi.iter().enumerate() {
                if ch.len() != frames {
                    return Err(Error::config(format!(
                        "roi {r} channel {c} has {} frames, expected {frames}",
                        ch.len()
                    )));
                }
                data.extend_from_slice(ch);
            }
        }
        Self::from_flat(frame_rate, roi_count, frames, data)
    }

    /// Builds a trace set from a flat region-major buffer.
    pub fn from_flat(frame_rate: f64, roi_count: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if roi_count == 0 {
            return Err(Error::degenerate("trace set needs at least one region"));
        }
        if frames < 2 {
            return Err(Error::degenerate(format!("trace set needs at least 2 frames, got {frames}")));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::config(format!("frame rate must be positive, got {frame_rate}")));
        }
        if data.len() != roi_count * CHANNELS * frames {
            return Err(Error::config(format!(
                "trace buffer has {} values, expected {}",
                data.len(),
                roi_count * CHANNELS * frames
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::degenerate(format!("non-finite trace value at flat index {i}")));
        }
        let roi_labels = if roi_count == DEFAULT_ROI_LABELS.len() {
            DEFAULT_ROI_LABELS.iter().map(|s| s.to_string()).collect()
        } else {
            (0..roi_count).map(|i| format!("block-{i}")).collect()
        };
        Ok(Self {
            roi_count,
            frame_rate,
            frames,
            roi_labels,
            data,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.roi_count {
            return Err(Error::config(format!(
                "{} labels for {} regions",
                labels.len(),
                self.roi_count
            )));
        }
        self.roi_labels = labels;
        Ok(self)
    }

    pub fn roi_count(&self) -> usize {
        self.roi_count
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn roi_labels(&self) -> &[String] {
        &self.roi_labels
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, roi: usize, channel: usize) -> &[f64] {
        let start = (roi * CHANNELS + channel) * self.frames;
        &self.data[start..start + self.frames]
    }

    /// Contiguous frame range `[start, start + len)` of every region.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len < 2 || start + len > self.frames {
            return Err(Error::degenerate(format!(
                "window [{start}, {}) outside {} frames",
                start + len,
                self.frames
            )));
        }
        let mut data = Vec::with_capacity(self.roi_count * CHANNELS * len);
        for r in 0..self.roi_count {
            for c in 0..CHANNELS {
                data.extend_from_slice(&self.channel(r, c)[start..start + len]);
            }
        }
        Ok(Self {
            roi_count: self.roi_count,
            frame_rate: self.frame_rate,
            frames: len,
            roi_labels: self.roi_labels.clone(),
            data,
        })
    }
}

/// Averages per-frame pixel samples of each region into a trace set.
///
/// `pixels[frame][roi]` lists the RGB samples of one region in one frame.
pub fn spatial_average(pixels: &[Vec<Vec<[f64; CHANNELS]>>], frame_rate: f64) -> Result<RoiTraceSet> {
    let frames = pixels.len();
    let roi_count = pixels.first().map(Vec::len).unwrap_or(0);
    if frames == 0 || roi_count == 0 {
        return Err(Error::degenerate("no frames or regions to average"));
    }
    let mut data = vec![0.0; roi_count * CHANNELS * frames];
    for (t, frame) in pixels.iter().enumerate() {
        if frame.len() != roi_count {
            return Err(Error::config(format!(
                "frame {t} has {} regions, expected {roi_count}",
                frame.len()
            )));
        }
        for (r, samples) in frame.iter().enumerate() {
            if samples.is_empty() {
                return Err(Error::degenerate(format!("frame {t} region {r} has no pixels")));
            }
            let n = samples.len() as f64;
            for c in 0..CHANNELS {
                let sum: f64 = samples.iter().map(|p| p[c]).sum();
                data[(r * CHANNELS + c) * frames + t] = sum / n;
            }
        }
    }
    RoiTraceSet::from_flat(frame_rate, roi_count, frames, data)
}

/// Population mean and standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True when a row's spread is indistinguishable from rounding noise.
fn is_flat(mean: f64, std: f64) -> bool {
    std <= 1e-10 * (mean.abs() + 1.0)
}

/// Z-scores `x` in place and returns the `(mean, std)` used.
///
/// A flat row becomes all zeros and reports `std = 0`.
pub fn zscore_in_place(x: &mut [f64]) -> (f64, f64) {
    let (mean, std) = mean_std(x);
    if is_flat(mean, std) {
        x.iter_mut().for_each(|v| *v = 0.0);
        return (mean, 0.0);
    }
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    (mean, std)
}

pub fn zscore(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    zscore_in_place(&mut out);
    out
}

/// Per-region POS pulse signals of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct RppgWindow {
    pub signals: Vec<Vec<f64>>,
    pub roi_labels: Vec<String>,
}

impl RppgWindow {
    pub fn rows(&self) -> usize {
        self.signals.len()
    }

    pub fn frames(&self) -> usize {
        self.signals.first().map(Vec::len).unwrap_or(0)
    }

    /// Row-major `K × F` buffer, the layout the rPPG network consumes.
    pub fn to_flat(&self) -> Vec<f64> {
        self.signals.iter().flatten().copied().collect()
    }
}

/// Block grid of the spatio-temporal map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
}

impl BlockGrid {
    pub fn blocks(&self) -> usize {
        self.rows * self.cols
    }
}

impl Default for BlockGrid {
    fn default() -> Self {
        Self { rows: 16, cols: 14 }
    }
}

/// Channel-major `3 × K × F` map of normalised block traces.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalMap {
    blocks: usize,
    frames: usize,
    data: Vec<f64>,
    stats: Vec<(f64, f64)>,
}

impl SpatioTemporalMap {
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, channel: usize, block: usize) -> &[f64] {
        let start = (channel * self.blocks + block) * self.frames;
        &self.data[start..start + self.frames]
    }

    /// The `(mean, std)` removed from row `(channel, block)`.
    pub fn stats(&self, channel: usize, block: usize) -> (f64, f64) {
        self.stats[channel * self.blocks + block]
    }

    /// Undoes the per-row normalisation, returning `traces[block][channel][frame]`.
    pub fn denormalize(&self) -> Vec<[Vec<f64>; CHANNELS]> {
        (0..self.blocks)
            .map(|k| {
                std::array::from_fn(|c| {
                    let (mean, std) = self.stats(c, k);
                    self.row(c, k).iter().map(|v| v * std + mean).collect()
                })
            })
            .collect()
    }
}

pub fn build_st_map(traces: &RoiTraceSet, grid: BlockGrid) -> Result<SpatioTemporalMap> {
    let blocks = grid.blocks();
    if traces.roi_count() != blocks {
        return Err(Error::config(format!(
            "spatio-temporal map expects {}x{} = {blocks} blocks, got {}",
            grid.rows,
            grid.cols,
            traces.roi_count()
        )));
    }
    let frames = traces.frames();
    let mut data = Vec::with_capacity(CHANNELS * blocks * frames);
    let mut stats = Vec::with_capacity(CHANNELS * blocks);
    for c in 0..CHANNELS {
        for k in 0..blocks {
            let start = data.len();
            data.extend_from_slice(traces.channel(k, c));
            stats.push(zscore_in_place(&mut data[start..]));
        }
    }
    Ok(SpatioTemporalMap {
        blocks,
        frames,
        data,
        stats,
    })
}

/// A pulse waveform with its first (VPG) and second (APG) forward differences.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTriplet {
    pub ppg: Vec<f64>,
    pub vpg: Vec<f64>,
    pub apg: Vec<f64>,
}

pub fn forward_difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn derive_triplet(ppg: &[f64]) -> Result<PulseTriplet> {
    if ppg.len() < 3 {
        return Err(Error::degenerate(format!(
            "pulse derivatives need at least 3 samples, got {}",
            ppg.len()
        )));
    }
    let vpg = forward_difference(ppg);
    let apg = forward_difference(&vpg);
    Ok(PulseTriplet {
        ppg: ppg.to_vec(),
        vpg,
        apg,
    })
}

/// Frequency (Hz) of the strongest spectral peak inside `[f_min, f_max]`.
///
/// The signal is mean-removed and zero-padded to at least `min_bins` points so the
/// peak can be located finer than the native `fs / n` resolution.
pub fn dominant_frequency(signal: &[f64], fs: f64, f_min: f64, f_max: f64) -> Result<f64> {
    if signal.len() < 4 {
        return Err(Error::degenerate("spectrum needs at least 4 samples"));
    }
    if !(0.0 <= f_min && f_min < f_max && f_max <= fs / 2.0) {
        return Err(Error::config(format!("invalid search band {f_min}..{f_max} Hz at fs {fs}")));
    }
    let n = (signal.len() * 8).max(1 << 15).next_power_of_two();
    let (mean, _) = mean_std(signal);
    let mut buf: Vec<Complex<f64>> = signal
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = fs / n as f64;
    let lo = (f_min / df).ceil() as usize;
    let hi = ((f_max / df).floor() as usize).min(n / 2);
    let best = (lo.max(1)..=hi)
        .max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr()))
        .ok_or_else(|| Error::degenerate("empty search band"))?;
    Ok(best as f64 * df)
}

/// Heart rate in BPM from the dominant frequency within 40–180 BPM.
pub fn estimate_heart_rate(signal: &[f64], fs: f64) -> Result<f64> {
    Ok(dominant_frequency(signal, fs, 40.0 / 60.0, 180.0 / 60.0)? * 60.0)
}

/// Lag `d` in `[-max_lag, max_lag]` maximising `sum_t a[t] * b[t + d]`.
///
/// A positive result means `b` trails `a` by `d` samples.
pub fn cross_correlation_lag(a: &[f64], b: &[f64], max_lag: usize) -> isize {
    let n = a.len().min(b.len()) as isize;
    let max_lag = max_lag as isize;
    (-max_lag..=max_lag)
        .map(|d| {
            let s: f64 = (0..n)
                .filter(|&t| t + d >= 0 && t + d < n)
                .map(|t| a[t as usize] * b[(t + d) as usize])
                .sum();
            (d, s / (n - d.abs()).max(1) as f64)
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(d, _)| d)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_average_identity_and_pair() {
        let frames: Vec<_> = (0..5).map(|_| vec![vec![[10.0, 20.0, 30.0]]]).collect();
        let t = spatial_average(&frames, 30.0).unwrap();
        for (c, want) in [10.0, 20.0, 30.0].iter().enumerate() {
            assert!(t.channel(0, c).iter().all(|v| v == want));
        }

        let frames: Vec<_> = (0..4)
            .map(|_| vec![vec![[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]]])
            .collect();
        let t = spatial_average(&frames, 30.0).unwrap();
        assert_eq!(t.channel(0, 0)[0], 1.0);
        assert_eq!(t.channel(0, 1)[0], 2.0);
        assert_eq!(t.channel(0, 2)[0], 3.0);
    }

    #[test]
    fn spatial_average_rejects_empty_region() {
        let frames = vec![vec![vec![[1.0, 1.0, 1.0]]], vec![vec![]]];
        assert!(matches!(spatial_average(&frames, 30.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn trace_set_rejects_non_finite_and_short() {
        let bad = RoiTraceSet::new(30.0, vec![[vec![1.0, f64::NAN], vec![1.0, 1.0], vec![1.0, 1.0]]]);
        assert!(matches!(bad, Err(Error::DegenerateInput(_))));
        let short = RoiTraceSet::new(30.0, vec![[vec![1.0], vec![1.0], vec![1.0]]]);
        assert!(matches!(short, Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn triplet_hand_example() {
        let t = derive_triplet(&[1.0, 3.0, 6.0, 10.0]).unwrap();
        assert_eq!(t.vpg, vec![2.0, 3.0, 4.0]);
        assert_eq!(t.apg, vec![1.0, 1.0]);
        let c = derive_triplet(&[2.5; 6]).unwrap();
        assert!(c.vpg.iter().chain(&c.apg).all(|v| *v == 0.0));
        assert!(matches!(derive_triplet(&[1.0, 2.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn st_map_constant_and_ramp() {
        let grid = BlockGrid { rows: 2, cols: 2 };
        let mut traces: Vec<[Vec<f64>; 3]> = (0..4)
            .map(|_| std::array::from_fn(|c| vec![50.0 + c as f64; 150]))
            .collect();
        traces[1][1] = (0..150).map(|v| v as f64).collect();
        let map = build_st_map(&RoiTraceSet::new(30.0, traces).unwrap(), grid).unwrap();
        assert_eq!(map.as_flat().len(), 3 * 4 * 150);
        assert!(map.row(0, 0).iter().all(|v| *v == 0.0));
        let (m, s) = mean_std(map.row(1, 1));
        assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn st_map_block_mismatch_is_config_error() {
        let traces: Vec<[Vec<f64>; 3]> = (0..3).map(|_| std::array::from_fn(|_| vec![1.0; 10])).collect();
        let r = build_st_map(&RoiTraceSet::new(30.0, traces).unwrap(), BlockGrid::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn lag_sign_convention() {
        let a: Vec<f64> = (0..200).map(|t| (t as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..200).map(|t| ((t as f64 - 3.0) * 0.3).sin()).collect();
        assert_eq!(cross_correlation_lag(&a, &b, 6), 3);
        assert_eq!(cross_correlation_lag(&b, &a, 6), -3);
    }
}
