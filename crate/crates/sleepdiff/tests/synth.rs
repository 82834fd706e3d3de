use rustfft::{num_complex::Complex, FftPlanner};
use sleepdiff::synth::{synth_domain, synth_raw, DomainSpec};
use sleepdiff_core::data::{Recording, EPOCH_SAMPLES};

/// Power in `[lo, hi)` Hz of `x` sampled at `fs`, from the periodogram.
fn band_power(planner: &mut FftPlanner<f64>, x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = fs / n as f64;
    (1..n / 2).filter(|&k| (lo..hi).contains(&(k as f64 * df))).map(|k| buf[k].norm_sqr()).sum::<f64>() / (n * n) as f64
}

#[test]
fn same_seed_is_bitwise_identical() {
    let spec = &DomainSpec::defaults()[3];
    let a = synth_domain(spec, 2, 20, 11).unwrap();
    let b = synth_domain(spec, 2, 20, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, synth_domain(spec, 2, 20, 12).unwrap());
}

#[test]
fn n3_has_more_delta_than_wake() {
    let mut planner = FftPlanner::new();
    for spec in DomainSpec::defaults() {
        let fs = spec.native_rate as f64;
        let per = 30 * spec.native_rate as usize;
        let (mut n3, mut w) = (Vec::new(), Vec::new());
        for i in 0..6 {
            let raw = synth_raw(&spec, 30, 5, i).unwrap();
            for (k, s) in raw.labels.iter().enumerate() {
                let p = band_power(&mut planner, &raw.eeg[k * per..(k + 1) * per], fs, 0.5, 4.0);
                match s.index() {
                    0 => w.push(p),
                    3 => n3.push(p),
                    _ => {}
                }
            }
        }
        assert!(!n3.is_empty() && !w.is_empty());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ratio = mean(&n3) / mean(&w);
        assert!(ratio >= 3.0, "domain {}: N3/W delta ratio {ratio}", spec.domain_id);
    }
}

#[test]
fn gain_is_removed_by_zscore() {
    let base = DomainSpec { reference_offset: 0.0, ..DomainSpec::defaults()[2].clone() };
    let a = synth_domain(&base, 1, 20, 3).unwrap();
    // A power-of-two gain scales every intermediate exactly.
    let b = synth_domain(&DomainSpec { gain: base.gain * 4.0, ..base.clone() }, 1, 20, 3).unwrap();
    assert_eq!(a, b);
    let c = synth_domain(&DomainSpec { gain: 3.7, ..base.clone() }, 1, 20, 3).unwrap();
    for (x, y) in a[0].epochs.iter().zip(&c[0].epochs) {
        for (u, v) in x.eeg.iter().zip(&y.eeg).chain(x.eog.iter().zip(&y.eog)) {
            assert!((u - v).abs() < 1e-5);
        }
    }
}

#[test]
fn preprocessed_recordings_are_standardised() {
    for spec in DomainSpec::defaults() {
        let rec = &synth_domain(&spec, 1, 20, 1).unwrap()[0];
        assert_eq!(rec.epochs.len(), 20);
        for ch in 0..2 {
            let x: Vec<f64> = rec
                .epochs
                .iter()
                .flat_map(|e| if ch == 0 { &e.eeg } else { &e.eog })
                .map(|&v| v as f64)
                .collect();
            assert_eq!(x.len(), 20 * EPOCH_SAMPLES);
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            assert!(m.abs() < 1e-5 && (sd - 1.0).abs() < 1e-4, "domain {} ch {ch}: {m} {sd}", spec.domain_id);
        }
    }
}

/// Log band powers of both channels.
fn features(planner: &mut FftPlanner<f64>, rec: &Recording) -> Vec<(Vec<f64>, usize)> {
    const EEG: [(f64, f64); 6] = [(0.5, 2.0), (2.0, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 16.0), (16.0, 30.0)];
    const EOG: [(f64, f64); 3] = [(0.2, 0.6), (0.6, 2.0), (2.0, 8.0)];
    rec.epochs
        .iter()
        .map(|e| {
            let eeg: Vec<f64> = e.eeg.iter().map(|&v| v as f64).collect();
            let eog: Vec<f64> = e.eog.iter().map(|&v| v as f64).collect();
            let mut f: Vec<f64> = EEG.iter().map(|&(lo, hi)| band_power(planner, &eeg, 100.0, lo, hi)).collect();
            f.extend(EOG.iter().map(|&(lo, hi)| band_power(planner, &eog, 100.0, lo, hi)));
            let f = f.into_iter().map(|p| (p + 1e-12).ln()).collect();
            (f, e.label.index())
        })
        .collect()
}

#[test]
fn band_power_nearest_centroid_separates_stages() {
    let mut planner = FftPlanner::new();
    for spec in DomainSpec::defaults() {
        let recs = synth_domain(&spec, 12, 20, 9).unwrap();
        let (train, test) = recs.split_at(6);
        let train: Vec<_> = train.iter().flat_map(|r| features(&mut planner, r)).collect();
        let test: Vec<_> = test.iter().flat_map(|r| features(&mut planner, r)).collect();
        let dim = train[0].0.len();
        let mut centroid = vec![vec![0.0; dim]; 5];
        let mut count = [0usize; 5];
        for (f, y) in &train {
            count[*y] += 1;
            for (c, v) in centroid[*y].iter_mut().zip(f) {
                *c += v;
            }
        }
        for (c, n) in centroid.iter_mut().zip(count) {
            assert!(n > 0, "domain {}: a stage is missing from training", spec.domain_id);
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let correct = test
            .iter()
            .filter(|(f, y)| {
                let dist = |c: &Vec<f64>| c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..5).min_by(|&a, &b| dist(&centroid[a]).total_cmp(&dist(&centroid[b]))).unwrap();
                best == *y
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc >= 0.7, "domain {}: nearest-centroid accuracy {acc}", spec.domain_id);
    }
}
