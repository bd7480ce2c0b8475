//! Deterministic synthetic subjects and recordings.
//!
//! Each subject carries blood pressure, heart rate, a cheek-to-forehead pulse transit
//! lag, an appearance vector and a noise profile. Rendering a session produces:
//!
//! * three-region mean RGB traces (cheek, inner cheek, forehead) whose pulse
//!   modulation is delayed per region by the subject's transit lag;
//! * a grid of block traces for the spatio-temporal map;
//! * the clean contact-PPG waveform on the same 30 Hz grid;
//! * a per-frame appearance vector that depends affinely on BP.
//!
//! The pulse waveform is a sum of two Gaussian-shaped lobes per beat. The systolic
//! lobe rises faster for higher SBP; the dicrotic lobe's amplitude and delay follow DBP.

pub mod export;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, tag};
use crate::signals::{BlockGrid, RoiTraceSet, CHANNELS};

/// Relative pulse amplitude per RGB channel (blood-volume signature of skin).
const PBV: [f64; CHANNELS] = [0.33, 0.77, 0.53];
/// Cheek, inner cheek, forehead: fraction of the transit lag applied to each region.
const ROI_LAG_FRACTION: [f64; 3] = [0.0, 0.25, 1.0];
const ROI_GAIN: [f64; 3] = [1.0, 0.96, 1.06];

/// A subgroup of subjects sharing a pulse-amplitude attenuation factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub label: String,
    pub attenuation: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub frame_rate: f64,
    pub duration_seconds: f64,
    pub sessions_min: usize,
    pub sessions_max: usize,
    pub block_grid: BlockGrid,
    pub appearance_dim: usize,
    /// Seed of the population-level appearance loadings, shared by every subject.
    pub world_seed: u64,
    /// Relative pulse modulation depth before attenuation.
    pub pulse_amplitude: f64,
    /// Per-subject noise scale is drawn log-uniformly from this range (uniformly when the minimum is 0).
    pub noise_sigma_min: f64,
    pub noise_sigma_max: f64,
    /// Mixture weight of the hypertensive SBP component.
    pub hypertensive_fraction: f64,
    /// Session labels deviate from the subject's BP by at most this many mmHg.
    pub session_jitter_mmhg: f64,
    /// Subject-level appearance noise (standard deviation per dimension).
    pub appearance_noise: f64,
    pub groups: Vec<GroupSpec>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            frame_rate: 30.0,
            duration_seconds: 20.0,
            sessions_min: 2,
            sessions_max: 5,
            block_grid: BlockGrid { rows: 4, cols: 4 },
            appearance_dim: 16,
            world_seed: 0x5eed_f00d,
            pulse_amplitude: 0.01,
            noise_sigma_min: 0.0001,
            noise_sigma_max: 0.006,
            hypertensive_fraction: 0.15,
            session_jitter_mmhg: 4.0,
            appearance_noise: 2.5,
            groups: vec![
                GroupSpec { label: "I".into(), attenuation: 1.0, weight: 0.4 },
                GroupSpec { label: "II".into(), attenuation: 0.75, weight: 0.35 },
                GroupSpec { label: "III".into(), attenuation: 0.5, weight: 0.25 },
            ],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("generator: {m}")));
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return fail("frame_rate must be positive");
        }
        if !(self.duration_seconds >= 5.0) {
            return fail("duration_seconds must be at least 5");
        }
        if self.sessions_min == 0 || self.sessions_min > self.sessions_max {
            return fail("need 1 <= sessions_min <= sessions_max");
        }
        if self.block_grid.blocks() == 0 {
            return fail("block grid must be non-empty");
        }
        if self.appearance_dim == 0 {
            return fail("appearance_dim must be positive");
        }
        if !(0.0 <= self.noise_sigma_min && self.noise_sigma_min <= self.noise_sigma_max) {
            return fail("need 0 <= noise_sigma_min <= noise_sigma_max");
        }
        if !(0.0..=1.0).contains(&self.hypertensive_fraction) {
            return fail("hypertensive_fraction must lie in [0, 1]");
        }
        if !(0.0..=5.0).contains(&self.session_jitter_mmhg) {
            return fail("session_jitter_mmhg must lie in [0, 5]");
        }
        if !(self.pulse_amplitude > 0.0 && self.appearance_noise >= 0.0) {
            return fail("pulse_amplitude must be positive and appearance_noise non-negative");
        }
        if self.groups.is_empty() {
            return fail("at least one group is required");
        }
        for g in &self.groups {
            if !(g.attenuation > 0.0 && g.attenuation <= 1.0) || !(g.weight > 0.0) {
                return fail("group attenuation must lie in (0, 1] and weight be positive");
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration_seconds * self.frame_rate).round() as usize
    }
}

/// Systolic / diastolic pair in mmHg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpPair {
    pub sbp: f64,
    pub dbp: f64,
}

impl BpPair {
    pub fn get(&self, target: Target) -> f64 {
        match target {
            Target::Sbp => self.sbp,
            Target::Dbp => self.dbp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Sbp,
    Dbp,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Sbp, Target::Dbp];

    pub fn name(self) -> &'static str {
        match self {
            Target::Sbp => "sbp",
            Target::Dbp => "dbp",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub subject_id: u64,
    pub sbp: f64,
    pub dbp: f64,
    pub heart_rate: f64,
    /// Forehead pulse delay relative to the cheek, seconds.
    pub ptt_lag: f64,
    pub appearance: Vec<f64>,
    pub noise_sigma: f64,
    pub attenuation: f64,
    pub group_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub subject: SyntheticSubject,
    pub session: usize,
    /// Three-region traces feeding the rPPG modality.
    pub traces: RoiTraceSet,
    /// Block traces feeding the spatio-temporal map.
    pub blocks: RoiTraceSet,
    pub ppg_truth: Vec<f64>,
    /// `frames × appearance_dim`, one appearance vector per frame.
    pub appearance: Vec<Vec<f64>>,
    pub labels: BpPair,
}

impl SyntheticRecord {
    pub fn frames(&self) -> usize {
        self.traces.frames()
    }
}

fn normal(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

/// Population-level appearance loadings: `appearance_dim × 3` (SBP, DBP, nuisance).
fn appearance_loadings(config: &GeneratorConfig) -> Vec<[f64; 3]> {
    let mut rng = rng_from(config.world_seed, &[tag("appearance-loadings")]);
    (0..config.appearance_dim)
        .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
        .collect()
}

pub fn generate_subject(seed: u64, config: &GeneratorConfig) -> Result<SyntheticSubject> {
    config.validate()?;
    generate_subject_with_loadings(seed, seed, config, &appearance_loadings(config))
}

fn generate_subject_with_loadings(
    subject_id: u64,
    seed: u64,
    config: &GeneratorConfig,
    loadings: &[[f64; 3]],
) -> Result<SyntheticSubject> {
    let mut rng = rng_from(seed, &[tag("subject")]);
    let sbp = if rng.random::<f64>() < config.hypertensive_fraction {
        normal(&mut rng, 158.0, 14.0)
    } else {
        normal(&mut rng, 118.0, 11.0)
    }
    .clamp(80.0, 240.0);
    let dbp = (0.55 * sbp + 10.0 + normal(&mut rng, 0.0, 5.0)).clamp(40.0, sbp - 15.0);
    let heart_rate = (72.0 + 0.1 * (sbp - 120.0) + normal(&mut rng, 0.0, 9.0)).clamp(45.0, 130.0);
    let ptt_lag = (0.11 - 0.0008 * (sbp - 120.0) + normal(&mut rng, 0.0, 0.005)).clamp(0.01, 0.25);

    let z = [(sbp - 120.0) / 15.0, (dbp - 76.0) / 9.0, normal(&mut rng, 0.0, 1.0)];
    let appearance = loadings
        .iter()
        .map(|l| l[0] * z[0] + l[1] * z[1] + 0.5 * l[2] * z[2] + normal(&mut rng, 0.0, config.appearance_noise))
        .collect();

    // Log-uniform, so clean and very noisy subjects are both well represented.
    let noise_sigma = if config.noise_sigma_max > config.noise_sigma_min && config.noise_sigma_min > 0.0 {
        rng.random_range(config.noise_sigma_min.ln()..config.noise_sigma_max.ln()).exp()
    } else if config.noise_sigma_max > config.noise_sigma_min {
        rng.random_range(config.noise_sigma_min..config.noise_sigma_max)
    } else {
        config.noise_sigma_min
    };

    let total: f64 = config.groups.iter().map(|g| g.weight).sum();
    let mut pick = rng.random::<f64>() * total;
    let group = config
        .groups
        .iter()
        .find(|g| {
            pick -= g.weight;
            pick < 0.0
        })
        .unwrap_or(config.groups.last().expect("validated non-empty"));

    Ok(SyntheticSubject {
        subject_id,
        sbp,
        dbp,
        heart_rate,
        ptt_lag,
        appearance,
        noise_sigma,
        attenuation: group.attenuation,
        group_label: group.label.clone(),
    })
}

/// Beat-shape parameters derived from a subject's BP and heart rate.
#[derive(Debug, Clone, Copy)]
struct BeatShape {
    period: f64,
    rise: f64,
    fall: f64,
    peak: f64,
    dicrotic_at: f64,
    dicrotic_width: f64,
    dicrotic_amp: f64,
}

impl BeatShape {
    fn new(sbp: f64, dbp: f64, heart_rate: f64) -> Self {
        let period = 60.0 / heart_rate;
        // Strictly decreasing in SBP: stiffer arteries give a steeper upstroke.
        let rise = (0.10 * (120.0 / sbp).powi(2)).clamp(0.03, 0.2);
        let peak = 3.0 * rise;
        let fall = 0.16 * period.sqrt();
        // Reflected wave arrives earlier at higher pressure.
        let gap = (0.30 - 0.004 * (sbp - 120.0)).clamp(0.12, 0.45);
        let dicrotic_at = (peak + gap).min((0.8 * period).max(peak + 0.1));
        let dicrotic_amp = (0.35 - 0.012 * (dbp - 76.0)).clamp(0.05, 0.7);
        Self {
            period,
            rise,
            fall,
            peak,
            dicrotic_at,
            dicrotic_width: 0.06,
            dicrotic_amp,
        }
    }

    /// One beat starting at `tau = 0`.
    fn beat(&self, tau: f64) -> f64 {
        let sys = if tau < self.peak {
            (-(tau - self.peak).powi(2) / (2.0 * self.rise * self.rise)).exp()
        } else {
            (-(tau - self.peak).powi(2) / (2.0 * self.fall * self.fall)).exp()
        };
        let d = tau - self.dicrotic_at;
        sys + self.dicrotic_amp * (-d * d / (2.0 * self.dicrotic_width * self.dicrotic_width)).exp()
    }

    /// Periodic waveform at time `t` for beats with onsets at `phase + k * period`.
    fn wave(&self, t: f64, phase: f64) -> f64 {
        let rel = t - phase;
        let k = (rel / self.period).floor();
        (-3..=1)
            .map(|j| self.beat(rel - (k + j as f64) * self.period))
            .sum()
    }
}

/// Renders one recording session of `duration` seconds.
pub fn render_record(
    subject: &SyntheticSubject,
    duration: f64,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<SyntheticRecord> {
    config.validate()?;
    if !(duration >= 5.0) {
        return Err(Error::config(format!("recording must last at least 5 s, got {duration}")));
    }
    let fs = config.frame_rate;
    let frames = (duration * fs).round() as usize;
    let mut rng = rng_from(seed, &[tag("render")]);
    let shape = BeatShape::new(subject.sbp, subject.dbp, subject.heart_rate);
    let phase = rng.random::<f64>() * shape.period;

    // Normalise the waveform to unit peak-to-peak over one period.
    let grid: Vec<f64> = (0..400).map(|i| shape.wave(i as f64 * shape.period / 400.0, 0.0)).collect();
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pulse = |t: f64| (shape.wave(t, phase) - lo) / (hi - lo) - 0.5;

    let ppg_truth: Vec<f64> = (0..frames).map(|i| pulse(i as f64 / fs)).collect();

    let skin: [f64; CHANNELS] = [
        normal(&mut rng, 160.0, 12.0).max(40.0),
        normal(&mut rng, 115.0, 10.0).max(30.0),
        normal(&mut rng, 95.0, 10.0).max(20.0),
    ];
    let drift_phase = rng.random::<f64>() * std::f64::consts::TAU;
    let drift = |t: f64| 1.0 + 0.02 * (std::f64::consts::TAU * 0.05 * t + drift_phase).sin();
    let amp = config.pulse_amplitude * subject.attenuation;

    let render = |gain: f64, lag: f64, depth: f64, sigma: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let out: [Vec<f64>; CHANNELS] = std::array::from_fn(|c| {
            (0..frames)
                .map(|i| {
                    let t = i as f64 / fs;
                    let base = skin[c] * gain * drift(t);
                    let eps: f64 = StandardNormal.sample(rng);
                    (base * (1.0 + amp * depth * PBV[c] * pulse(t - lag) + sigma * eps)).max(0.0)
                })
                .collect()
        });
        out
    };

    let roi: Vec<[Vec<f64>; CHANNELS]> = (0..3)
        .map(|r| render(ROI_GAIN[r], ROI_LAG_FRACTION[r] * subject.ptt_lag, 1.0, subject.noise_sigma, &mut rng))
        .collect();
    let traces = RoiTraceSet::new(fs, roi)?;

    let grid_rows = config.block_grid.rows;
    let block_traces: Vec<[Vec<f64>; CHANNELS]> = (0..config.block_grid.blocks())
        .map(|k| {
            let row = k / config.block_grid.cols;
            let frac = if grid_rows > 1 { row as f64 / (grid_rows - 1) as f64 } else { 0.0 };
            let depth = 0.6 + 0.8 * rng.random::<f64>();
            render(1.0, 0.2 * frac * subject.ptt_lag, depth, 2.0 * subject.noise_sigma, &mut rng)
        })
        .collect();
    let blocks = RoiTraceSet::from_flat(
        fs,
        block_traces.len(),
        frames,
        block_traces.into_iter().flat_map(|b| b.into_iter().flatten()).collect(),
    )?;

    let session_offset: Vec<f64> = subject.appearance.iter().map(|_| normal(&mut rng, 0.0, 0.1)).collect();
    let appearance = (0..frames)
        .map(|_| {
            subject
                .appearance
                .iter()
                .zip(&session_offset)
                .map(|(a, o)| a + o + normal(&mut rng, 0.0, 0.05))
                .collect()
        })
        .collect();

    let j = config.session_jitter_mmhg;
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let sbp = subject.sbp + jitter(&mut rng);
    let dbp = (subject.dbp + jitter(&mut rng)).min(sbp - 1.0);

    Ok(SyntheticRecord {
        subject: subject.clone(),
        session: 0,
        traces,
        blocks,
        ppg_truth,
        appearance,
        labels: BpPair { sbp, dbp },
    })
}

/// Generates `n_subjects` subjects with `sessions_min..=sessions_max` sessions each.
pub fn generate_dataset(n_subjects: usize, seed: u64, config: &GeneratorConfig) -> Result<Vec<SyntheticRecord>> {
    config.validate()?;
    if n_subjects < 5 {
        return Err(Error::config(format!("need at least 5 subjects, got {n_subjects}")));
    }
    let loadings = appearance_loadings(config);
    let mut records = Vec::new();
    for id in 0..n_subjects as u64 {
        let subject_seed = derive_seed(seed, &[tag("subject"), id]);
        let subject = generate_subject_with_loadings(id, subject_seed, config, &loadings)?;
        let mut rng = rng_from(subject_seed, &[tag("sessions")]);
        let sessions = rng.random_range(config.sessions_min..=config.sessions_max);
        for s in 0..sessions {
            let mut rec = render_record(
                &subject,
                config.duration_seconds,
                derive_seed(subject_seed, &[tag("session"), s as u64]),
                config,
            )?;
            rec.session = s;
            records.push(rec);
        }
    }
    Ok(records)
}
