//! Generator properties checked with independent oracles.

use ubp_core::signals::pos_project;
use ubp_core::synth::export::write_dataset;
use ubp_core::synth::{generate_dataset, generate_subject, render_record, GeneratorConfig, SyntheticSubject};

fn clean_config() -> GeneratorConfig {
    GeneratorConfig {
        noise_sigma_min: 0.0,
        noise_sigma_max: 0.0,
        ..Default::default()
    }
}

fn dft_peak(x: &[f64], fs: f64, lo: f64, hi: f64, step: f64) -> f64 {
    let mut best = (lo, f64::NEG_INFINITY);
    let mut f = lo;
    while f <= hi {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let ph = std::f64::consts::TAU * f * t as f64 / fs;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        if re * re + im * im > best.1 {
            best = (f, re * re + im * im);
        }
        f += step;
    }
    best.0
}

fn xcorr_peak(a: &[f64], b: &[f64], max_lag: isize) -> isize {
    let n = a.len() as isize;
    (-max_lag..=max_lag)
        .map(|d| {
            let (mut s, mut c) = (0.0, 0.0);
            for t in 0..n {
                if t + d >= 0 && t + d < n {
                    s += a[t as usize] * b[(t + d) as usize];
                    c += 1.0;
                }
            }
            (d, s / c)
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
        .0
}

/// Mean frames from each beat's foot (minimum) to its steepest rise.
fn upstroke_frames(ppg: &[f64], fs: f64, heart_rate: f64) -> f64 {
    let period = fs * 60.0 / heart_rate;
    let mut times = Vec::new();
    let mut start = 0.0;
    while (start + 2.0 * period) as usize <= ppg.len() {
        let a = start as usize;
        let b = (start + period) as usize;
        let foot = (a..b).min_by(|&i, &j| ppg[i].total_cmp(&ppg[j])).unwrap();
        let end = (foot + period as usize).min(ppg.len() - 1);
        let steepest = (foot..end)
            .max_by(|&i, &j| (ppg[i + 1] - ppg[i]).total_cmp(&(ppg[j + 1] - ppg[j])))
            .unwrap();
        times.push((steepest - foot) as f64);
        start += period;
    }
    times.iter().sum::<f64>() / times.len() as f64
}

#[test]
fn hypertensive_fraction_in_range() {
    let cfg = GeneratorConfig::default();
    let high = (0..1000)
        .filter(|&s| generate_subject(s, &cfg).unwrap().sbp >= 140.0)
        .count() as f64
        / 1000.0;
    assert!((0.08..=0.20).contains(&high), "fraction {high}");
}

#[test]
fn clean_render_recovers_heart_rate() {
    let cfg = clean_config();
    for seed in 0..8 {
        let mut subject = generate_subject(seed, &cfg).unwrap();
        subject.attenuation = 1.0;
        let rec = render_record(&subject, 20.0, seed + 100, &cfg).unwrap();
        let w = pos_project(&rec.traces, 1.6).unwrap();
        let hr = 60.0 * dft_peak(&w.signals[0], 30.0, 0.6, 3.0, 0.002);
        assert!((hr - subject.heart_rate).abs() <= 1.0, "seed {seed}: {hr} vs {}", subject.heart_rate);
    }
}

#[test]
fn forehead_lags_cheek_by_two_frames() {
    let cfg = clean_config();
    let mut subject = generate_subject(4, &cfg).unwrap();
    subject.ptt_lag = 0.0667;
    let rec = render_record(&subject, 10.0, 9, &cfg).unwrap();
    let w = pos_project(&rec.traces, 1.6).unwrap();
    assert_eq!(xcorr_peak(&w.signals[0], &w.signals[2], 8), 2);
}

fn with_sbp(base: &SyntheticSubject, sbp: f64) -> SyntheticSubject {
    SyntheticSubject { sbp, ..base.clone() }
}

#[test]
fn higher_sbp_has_faster_upstroke() {
    let cfg = clean_config();
    let base = generate_subject(21, &cfg).unwrap();
    let lo = render_record(&with_sbp(&base, 110.0), 20.0, 5, &cfg).unwrap();
    let hi = render_record(&with_sbp(&base, 180.0), 20.0, 5, &cfg).unwrap();
    let t_lo = upstroke_frames(&lo.ppg_truth, 30.0, base.heart_rate);
    let t_hi = upstroke_frames(&hi.ppg_truth, 30.0, base.heart_rate);
    assert!(t_hi < t_lo, "upstroke {t_hi} (180) vs {t_lo} (110)");
}

#[test]
fn upstroke_ordering_is_monotone_in_sbp() {
    let cfg = clean_config();
    let base = generate_subject(8, &cfg).unwrap();
    let times: Vec<f64> = [95.0, 120.0, 150.0, 190.0]
        .iter()
        .map(|&s| upstroke_frames(&render_record(&with_sbp(&base, s), 20.0, 3, &cfg).unwrap().ppg_truth, 30.0, base.heart_rate))
        .collect();
    assert!(times.windows(2).all(|w| w[1] < w[0]), "{times:?}");
}

/// Ordinary least squares R² via normal equations (Gaussian elimination).
fn r_squared(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let p = x[0].len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += z[i] * z[j];
            }
            a[i][p] += z[i] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (row, &yi) in x.iter().zip(y) {
        let pred = beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        ss_res += (yi - pred).powi(2);
        ss_tot += (yi - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

#[test]
fn appearance_explains_sbp() {
    let cfg = GeneratorConfig::default();
    let subjects: Vec<_> = (0..500).map(|s| generate_subject(s, &cfg).unwrap()).collect();
    let x: Vec<Vec<f64>> = subjects.iter().map(|s| s.appearance.clone()).collect();
    let y: Vec<f64> = subjects.iter().map(|s| s.sbp).collect();
    let r2 = r_squared(&x, &y);
    assert!(r2 >= 0.3, "R² = {r2}");
}

#[test]
fn dataset_size_and_determinism() {
    let cfg = GeneratorConfig {
        duration_seconds: 6.0,
        ..Default::default()
    };
    let a = generate_dataset(10, 77, &cfg).unwrap();
    assert!((20..=50).contains(&a.len()));
    let mut ids: Vec<u64> = a.iter().map(|r| r.subject.subject_id).collect();
    ids.dedup();
    assert_eq!(ids.len(), 10);

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = write_dataset(d1.path(), &a, 77, 10, &cfg).unwrap();
    let m2 = write_dataset(d2.path(), &generate_dataset(10, 77, &cfg).unwrap(), 77, 10, &cfg).unwrap();
    assert_eq!(m1.digest(), m2.digest());
    assert_eq!(
        std::fs::read(d1.path().join("manifest.json")).unwrap(),
        std::fs::read(d2.path().join("manifest.json")).unwrap()
    );
}
