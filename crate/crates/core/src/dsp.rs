//! Signal preprocessing: zero-phase Butterworth band-pass, rational-rate
//! resampling and z-scoring.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

pub const TARGET_RATE: u32 = 100;
pub const BAND_LOW: f64 = 0.3;
pub const BAND_HIGH: f64 = 35.0;
/// Butterworth order of each edge of the band-pass (before the
/// forward-backward pass doubles it).
pub const BAND_ORDER: usize = 4;

/// Second-order section in direct form II transposed, `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_raw(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [a1 / a0, a2 / a0] }
    }

    pub fn lowpass(fc: f64, fs: f64, q: f64) -> Self {
        let w = 2.0 * PI * fc / fs;
        let (s, c) = (libm::sin(w), libm::cos(w));
        let alpha = s / (2.0 * q);
        let b0 = (1.0 - c) / 2.0;
        Self::from_raw([b0, 1.0 - c, b0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn highpass(fc: f64, fs: f64, q: f64) -> Self {
        let w = 2.0 * PI * fc / fs;
        let (s, c) = (libm::sin(w), libm::cos(w));
        let alpha = s / (2.0 * q);
        let b0 = (1.0 + c) / 2.0;
        Self::from_raw([b0, -(1.0 + c), b0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State after a unit step has settled.
    fn step_state(&self) -> [f64; 2] {
        let h = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * h;
        let z1 = self.b[1] - self.a[0] * h + z2;
        [z1, z2]
    }

    /// Magnitude response at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (c1, s1, c2, s2) = (libm::cos(w), libm::sin(w), libm::cos(2.0 * w), libm::sin(2.0 * w));
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = -(self.b[1] * s1 + self.b[2] * s2);
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = -(self.a[0] * s1 + self.a[1] * s2);
        libm::sqrt((nr * nr + ni * ni) / (dr * dr + di * di))
    }
}

/// Quality factors of the sections of an even-order Butterworth filter.
fn butterworth_q(order: usize) -> impl Iterator<Item = f64> {
    (0..order / 2).map(move |k| 1.0 / (2.0 * libm::cos((2 * k + 1) as f64 * PI / (2 * order) as f64)))
}

/// Sections of a Butterworth band-pass: high-pass at `low` cascaded with
/// low-pass at `high`, each of order `order` (even).
pub fn bandpass_sections(fs: f64, low: f64, high: f64, order: usize) -> Result<Vec<Biquad>> {
    if !(fs > 2.0 * high) {
        return Err(Error::SampleRateTooLow { fs, high });
    }
    if !(low > 0.0 && low < high) || order == 0 || !order.is_multiple_of(2) {
        return Err(Error::Config(alloc::format!("invalid band {low}..{high} Hz of order {order}")));
    }
    let mut s: Vec<Biquad> = butterworth_q(order).map(|q| Biquad::highpass(low, fs, q)).collect();
    s.extend(butterworth_q(order).map(|q| Biquad::lowpass(high, fs, q)));
    Ok(s)
}

/// Causal filtering in place, starting from the state a constant input
/// equal to `x[0]` would have settled to.
pub fn lfilter(sections: &[Biquad], x: &mut [f64]) {
    let Some(&x0) = x.first() else { return };
    let mut scale = x0;
    for s in sections {
        let [mut z1, mut z2] = s.step_state().map(|z| z * scale);
        scale *= s.dc_gain();
        let ([b0, b1, b2], [a1, a2]) = (s.b, s.a);
        for v in x.iter_mut() {
            let u = *v;
            let y = b0 * u + z1;
            z1 = b1 * u - a1 * y + z2;
            z2 = b2 * u - a2 * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with odd-reflection padding of `pad` samples
/// and settled initial state, so the output has zero phase.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    lfilter(sections, &mut ext);
    ext.reverse();
    lfilter(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase band-pass between `low` and `high` Hz.
pub fn bandpass(x: &[f64], fs: f64, low: f64, high: f64) -> Result<Vec<f64>> {
    let sections = bandpass_sections(fs, low, high, BAND_ORDER)?;
    let pad = libm::ceil(3.0 * fs / low) as usize;
    Ok(filtfilt(&sections, x, pad))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Largest interpolation or decimation factor accepted by [`resample`].
pub const MAX_FACTOR: u64 = 4096;
const ZERO_CROSSINGS: usize = 16;

/// Up/down factors `(L, M)` for converting `from` Hz to `to` Hz.
pub fn rational_factors(from: f64, to: f64) -> Result<(u64, u64)> {
    let integral = |r: f64| r > 0.0 && r.is_finite() && libm::fmod(r, 1.0) == 0.0 && r < 1e9;
    if !integral(from) || !integral(to) {
        return Err(Error::UnsupportedRatio { from, to });
    }
    let (a, b) = (from as u64, to as u64);
    let g = gcd(a, b);
    let (l, m) = (b / g, a / g);
    if l.max(m) > MAX_FACTOR {
        return Err(Error::UnsupportedRatio { from, to });
    }
    Ok((l, m))
}

/// Rational-rate resampling with a Blackman-windowed sinc anti-aliasing
/// filter cut at `min(from, to) / 2`. Output length is
/// `round(len * to / from)`; equal rates return the input unchanged.
pub fn resample(x: &[f64], from: f64, to: f64) -> Result<Vec<f64>> {
    let (l, m) = rational_factors(from, to)?;
    if l == m {
        return Ok(x.to_vec());
    }
    let (l, m) = (l as usize, m as usize);
    let r = l.max(m);
    // Filter on the upsampled grid: cutoff 0.5 / r cycles per sample.
    let half = ZERO_CROSSINGS * r;
    let table: Vec<f64> = (0..=half)
        .map(|k| {
            let t = k as f64 / r as f64;
            let sinc = if k == 0 { 1.0 } else { libm::sin(PI * t) / (PI * t) };
            let u = k as f64 / half as f64;
            let win = 0.42 + 0.5 * libm::cos(PI * u) + 0.08 * libm::cos(2.0 * PI * u);
            sinc * win
        })
        .collect();
    let n = x.len();
    let out_len = (n * l + m / 2) / m;
    let mut out = vec![0.0; out_len];
    for (j, o) in out.iter_mut().enumerate() {
        let pos = j * m;
        let first = pos.saturating_sub(half).div_ceil(l);
        let last = ((pos + half) / l).min(n.saturating_sub(1));
        let (mut acc, mut wsum) = (0.0, 0.0);
        for (i, &xi) in x.iter().enumerate().take(last + 1).skip(first) {
            let w = table[(i * l).abs_diff(pos)];
            acc += w * xi;
            wsum += w;
        }
        *o = if wsum != 0.0 { acc / wsum } else { 0.0 };
    }
    Ok(out)
}

/// `(x - mean) / max(std, 1e-8)` with the population standard deviation.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var).max(1e-8);
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Band-pass, resample to 100 Hz and z-score one channel of a recording.
pub fn preprocess(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    let y = bandpass(x, fs, BAND_LOW, BAND_HIGH)?;
    let y = resample(&y, fs, TARGET_RATE as f64)?;
    Ok(zscore(&y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| libm::sin(2.0 * PI * f * i as f64 / fs)).collect()
    }

    /// Amplitude and phase of the `f` Hz component by least squares over `range`.
    fn fit(x: &[f64], f: f64, fs: f64, range: core::ops::Range<usize>) -> (f64, f64) {
        let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in range {
            let w = 2.0 * PI * f * i as f64 / fs;
            let (s, c) = (libm::sin(w), libm::cos(w));
            ss += s * s;
            sc += s * c;
            cc += c * c;
            xs += x[i] * s;
            xc += x[i] * c;
        }
        let det = ss * cc - sc * sc;
        let a = (xs * cc - xc * sc) / det;
        let b = (xc * ss - xs * sc) / det;
        (libm::sqrt(a * a + b * b), libm::atan2(b, a))
    }

    #[test]
    fn butterworth_section_q_values() {
        let q: Vec<f64> = butterworth_q(4).collect();
        assert!((q[0] - 0.541_196_1).abs() < 1e-6);
        assert!((q[1] - 1.306_563).abs() < 1e-6);
    }

    #[test]
    fn ten_hertz_passes_unchanged() {
        let x = tone(10.0, 100.0, 6000);
        let y = bandpass(&x, 100.0, 0.3, 35.0).unwrap();
        let (amp, phase) = fit(&y, 10.0, 100.0, 1000..5000);
        assert!((amp - 1.0).abs() < 0.05, "amplitude {amp}");
        assert!(phase.abs() < 1e-2, "phase {phase}");
    }

    #[test]
    fn mains_and_dc_are_removed() {
        let x = tone(50.0, 200.0, 12000);
        let y = bandpass(&x, 200.0, 0.3, 35.0).unwrap();
        let (amp, _) = fit(&y, 50.0, 200.0, 2000..10000);
        assert!(20.0 * amp.log10() <= -20.0, "50 Hz gain {amp}");
        let dc = vec![3.0; 6000];
        let y = bandpass(&dc, 100.0, 0.3, 35.0).unwrap();
        let rms = (y[1000..5000].iter().map(|v| v * v).sum::<f64>() / 4000.0).sqrt();
        assert!(20.0 * (rms / 3.0).log10() <= -20.0, "dc residual {rms}");
    }

    #[test]
    fn low_rate_is_rejected() {
        assert!(matches!(bandpass(&[0.0; 10], 60.0, 0.3, 35.0), Err(Error::SampleRateTooLow { .. })));
    }

    #[test]
    fn resample_halves_and_keeps_tone() {
        let x = tone(5.0, 200.0, 6000);
        let y = resample(&x, 200.0, 100.0).unwrap();
        assert_eq!(y.len(), 3000);
        let (amp, phase) = fit(&y, 5.0, 100.0, 200..2800);
        assert!((amp - 1.0).abs() < 0.02, "amplitude {amp}");
        assert!(phase.abs() < 1e-3);
    }

    #[test]
    fn resample_other_rates() {
        for (fs, n) in [(125.0, 3750usize), (256.0, 7680)] {
            let y = resample(&tone(3.0, fs, n), fs, 100.0).unwrap();
            assert_eq!(y.len(), 3000);
            let (amp, _) = fit(&y, 3.0, 100.0, 300..2700);
            assert!((amp - 1.0).abs() < 0.02, "{fs} Hz: amplitude {amp}");
        }
    }

    #[test]
    fn equal_rates_pass_through_bitwise() {
        let x = tone(7.3, 100.0, 999);
        assert_eq!(resample(&x, 100.0, 100.0).unwrap(), x);
    }

    #[test]
    fn non_integer_rate_is_unsupported() {
        assert!(matches!(resample(&[1.0; 8], 100.5, 100.0), Err(Error::UnsupportedRatio { .. })));
        assert!(matches!(resample(&[1.0; 8], 1e6 + 1.0, 100.0), Err(Error::UnsupportedRatio { .. })));
    }

    #[test]
    fn zscore_examples() {
        assert!(zscore(&[4.0; 10]).iter().all(|&v| v == 0.0));
        let x = tone(1.3, 100.0, 1000);
        let z = zscore(&x);
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let sd = (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-10 && (sd - 1.0).abs() <= 1e-6);
        let affine: Vec<f64> = x.iter().map(|v| 3.5 * v - 2.0).collect();
        for (a, b) in zscore(&affine).iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
