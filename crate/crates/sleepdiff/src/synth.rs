//! Synthetic two-channel sleep recordings with stage-specific waveforms and
//! per-domain acquisition differences.
//!
//! Each domain is described by a [`DomainSpec`]. A recording is generated at
//! the domain's native rate as stage signature plus pink noise, passed
//! through the domain's acquisition chain
//! `gain * polarity * (x + tilt * hp10(x)) + reference_offset * r`
//! (with `r` a reference signal shared by both channels), then through the
//! regular preprocessing chain.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sleepdiff_core::config::parse_kv;
use sleepdiff_core::data::{Recording, Stage};
use sleepdiff_core::dsp::{lfilter, Biquad};
use sleepdiff_core::rng::{stream, Rng};
use sleepdiff_core::{Error, Result};

pub const EPOCH_SECONDS: f64 = 30.0;
pub const NATIVE_RATES: [u32; 4] = [100, 125, 200, 256];

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub domain_id: u16,
    pub gain: f64,
    pub noise_std: f64,
    /// +1 or -1.
    pub polarity: f64,
    pub spectral_tilt: f64,
    pub reference_offset: f64,
    pub native_rate: u32,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad(format!("domain {}: gain must be positive, got {}", self.domain_id, self.gain));
        }
        if self.polarity != 1.0 && self.polarity != -1.0 {
            return bad(format!("domain {}: polarity must be +1 or -1, got {}", self.domain_id, self.polarity));
        }
        if !NATIVE_RATES.contains(&self.native_rate) {
            return bad(format!("domain {}: native rate {} not in {NATIVE_RATES:?}", self.domain_id, self.native_rate));
        }
        if !(self.noise_std >= 0.0 && self.spectral_tilt.is_finite() && self.reference_offset.is_finite()) {
            return bad(format!("domain {}: invalid noise/tilt/offset", self.domain_id));
        }
        Ok(())
    }

    /// Five mutually distinct domains covering every native rate.
    pub fn defaults() -> Vec<DomainSpec> {
        let d = |domain_id, gain, noise_std, polarity, spectral_tilt, reference_offset, native_rate| DomainSpec {
            domain_id,
            gain,
            noise_std,
            polarity,
            spectral_tilt,
            reference_offset,
            native_rate,
        };
        vec![
            d(0, 1.0, 0.30, 1.0, 0.0, 0.00, 100),
            d(1, 2.5, 0.45, -1.0, 0.6, 0.20, 125),
            d(2, 0.6, 0.35, 1.0, -0.4, 0.40, 200),
            d(3, 1.8, 0.55, -1.0, 0.9, 0.10, 256),
            d(4, 1.3, 0.40, 1.0, -0.6, 0.30, 200),
        ]
    }
}

/// Generator settings, loadable from `key = value` text:
///
/// ```text
/// seed = 7
/// recordings = 40
/// epochs = 20
/// domain.0.gain = 1.0
/// domain.0.native_rate = 100
/// ```
///
/// Domain keys are `domain.<id>.<field>`; a domain id not among the defaults
/// starts from the first default spec.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub recordings: usize,
    pub epochs: usize,
    pub domains: Vec<DomainSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, recordings: 40, epochs: 20, domains: DomainSpec::defaults() }
    }
}

impl SynthConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.apply(&k, &v)?;
        }
        for d in &cfg.domains {
            d.validate()?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let err = || Error::Config(format!("{key}: cannot parse {value:?}"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| err());
        match key {
            "seed" => self.seed = value.parse().map_err(|_| err())?,
            "recordings" => self.recordings = value.parse().map_err(|_| err())?,
            "epochs" => self.epochs = value.parse().map_err(|_| err())?,
            _ => {
                let mut parts = key.splitn(3, '.');
                let (Some("domain"), Some(id), Some(field)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::Config(format!("unknown generator key {key:?}")));
                };
                let id: u16 = id.parse().map_err(|_| err())?;
                let pos = match self.domains.iter().position(|d| d.domain_id == id) {
                    Some(p) => p,
                    None => {
                        self.domains.push(DomainSpec { domain_id: id, ..DomainSpec::defaults()[0].clone() });
                        self.domains.len() - 1
                    }
                };
                let d = &mut self.domains[pos];
                match field {
                    "gain" => d.gain = num(value)?,
                    "noise_std" => d.noise_std = num(value)?,
                    "polarity" => d.polarity = num(value)?,
                    "spectral_tilt" => d.spectral_tilt = num(value)?,
                    "reference_offset" => d.reference_offset = num(value)?,
                    "native_rate" => d.native_rate = value.parse().map_err(|_| err())?,
                    _ => return Err(Error::Config(format!("unknown domain field {field:?}"))),
                }
            }
        }
        Ok(())
    }
}

/// Stage transition probabilities, rows = current stage.
/// Self-transitions give mean dwell times of 2.5 to 5 epochs.
pub const TRANSITIONS: [[f64; 5]; 5] = [
    [0.80, 0.12, 0.05, 0.00, 0.03],
    [0.08, 0.60, 0.25, 0.00, 0.07],
    [0.03, 0.05, 0.75, 0.12, 0.05],
    [0.02, 0.01, 0.17, 0.80, 0.00],
    [0.05, 0.08, 0.07, 0.00, 0.80],
];

/// Stage sequence from the Markov chain; the first stage is uniform, since
/// recordings are treated as fragments of a night.
pub fn stage_sequence(rng: &mut Rng, n: usize) -> Vec<Stage> {
    let mut out = Vec::with_capacity(n);
    let mut s = rng.gen_range(0..5);
    for _ in 0..n {
        out.push(Stage::ALL[s]);
        let u: f64 = rng.gen();
        let row = &TRANSITIONS[s];
        let mut acc = 0.0;
        s = row.iter().position(|&p| {
            acc += p;
            u < acc
        })
        .unwrap_or(4);
    }
    out
}

/// Pink (1/f) noise from Paul Kellet's filter, scaled to unit variance.
pub fn pink_noise(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let p = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            p
        })
        .collect();
    let n = n.max(1) as f64;
    let mean = out.iter().sum::<f64>() / n;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    for v in &mut out {
        *v = (*v - mean) / sd;
    }
    out
}

/// Writes into one epoch worth of samples at rate `fs`.
struct Epoch<'a> {
    x: &'a mut [f64],
    fs: f64,
}

impl Epoch<'_> {
    fn seconds(&self) -> f64 {
        self.x.len() as f64 / self.fs
    }

    fn tone(&mut self, freq: f64, amp: f64, phase: f64) {
        let fs = self.fs;
        for (i, v) in self.x.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * freq * i as f64 / fs + phase).sin();
        }
    }

    /// Sinusoid under a Hann window starting at `start` seconds.
    fn burst(&mut self, start: f64, dur: f64, freq: f64, amp: f64) {
        let (a, b) = self.span(start, dur);
        let fs = self.fs;
        for i in a..b {
            let t = i as f64 / fs - start;
            let w = 0.5 - 0.5 * (2.0 * PI * t / dur).cos();
            self.x[i] += amp * w * (2.0 * PI * freq * t).sin();
        }
    }

    /// Gaussian bump centred at `c` seconds.
    fn bump(&mut self, c: f64, width: f64, amp: f64) {
        let (a, b) = self.span(c - 4.0 * width, 8.0 * width);
        for i in a..b {
            let z = (i as f64 / self.fs - c) / width;
            self.x[i] += amp * (-0.5 * z * z).exp();
        }
    }

    /// Smoothed step up at `t0` and back down at `t1`.
    fn deflection(&mut self, t0: f64, t1: f64, amp: f64) {
        let (a, b) = self.span(t0 - 0.2, t1 - t0 + 0.4);
        for i in a..b {
            let t = i as f64 / self.fs;
            self.x[i] += amp * 0.5 * (((t - t0) / 0.02).tanh() - ((t - t1) / 0.02).tanh());
        }
    }

    fn span(&self, start: f64, dur: f64) -> (usize, usize) {
        let n = self.x.len() as f64;
        let a = (start * self.fs).clamp(0.0, n) as usize;
        let b = ((start + dur) * self.fs).clamp(0.0, n) as usize;
        (a, b)
    }
}

/// Stage signature for one epoch of both channels, added into `eeg`/`eog`.
fn signature(stage: Stage, rng: &mut Rng, eeg: &mut Epoch<'_>, eog: &mut Epoch<'_>) {
    let len = eeg.seconds();
    let at = |rng: &mut Rng, dur: f64| rng.gen_range(0.0..(len - dur).max(0.1));
    let ph = |rng: &mut Rng| rng.gen_range(0.0..2.0 * PI);
    match stage {
        Stage::W => {
            for _ in 0..rng.gen_range(4..7) {
                let dur = rng.gen_range(1.0..3.0);
                let t = at(rng, dur);
                eeg.burst(t, dur, rng.gen_range(18.0..25.0), 1.2);
            }
            for _ in 0..rng.gen_range(2..5) {
                let t = at(rng, 0.5) + 0.25;
                eog.bump(t, 0.08, 2.0);
            }
        }
        Stage::N1 => {
            for _ in 0..2 {
                eeg.tone(rng.gen_range(4.0..7.0), 0.7, ph(rng));
            }
            eog.tone(rng.gen_range(0.3..0.5), 2.0, ph(rng));
        }
        Stage::N2 => {
            eeg.tone(rng.gen_range(4.0..7.0), 0.3, ph(rng));
            for _ in 0..rng.gen_range(2..4) {
                let dur = rng.gen_range(0.8..1.6);
                let t = at(rng, dur);
                eeg.burst(t, dur, rng.gen_range(12.0..16.0), 1.6);
            }
            for _ in 0..rng.gen_range(1..3) {
                let c = at(rng, 1.5) + 0.5;
                eeg.bump(c, 0.08, -3.5);
                eeg.bump(c + 0.35, 0.15, 2.0);
            }
        }
        Stage::N3 => {
            for _ in 0..3 {
                let f = rng.gen_range(0.5..2.0);
                let p = ph(rng);
                eeg.tone(f, 1.8, p);
                eog.tone(f, 0.4, p);
            }
        }
        Stage::Rem => {
            eeg.tone(rng.gen_range(4.0..7.0), 0.35, ph(rng));
            eeg.tone(rng.gen_range(14.0..25.0), 0.2, ph(rng));
            for _ in 0..rng.gen_range(2..4) {
                let mut t = at(rng, 4.0);
                for _ in 0..rng.gen_range(3..7) {
                    let hold = rng.gen_range(0.2..0.5);
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    eog.deflection(t, t + hold, sign * 2.0);
                    t += hold + rng.gen_range(0.1..0.3);
                }
            }
        }
    }
}

/// A recording before preprocessing, at the domain's native rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub fs: f64,
    pub eeg: Vec<f64>,
    pub eog: Vec<f64>,
    pub labels: Vec<Stage>,
}

/// Recording `index` of a domain, before preprocessing.
pub fn synth_raw(spec: &DomainSpec, n_epochs: usize, seed: u64, index: usize) -> Result<RawRecording> {
    spec.validate()?;
    let mut rng = stream(seed, &format!("synth.{}.{index}", spec.domain_id));
    let fs = spec.native_rate as f64;
    let per = (EPOCH_SECONDS * fs) as usize;
    let n = n_epochs * per;
    let labels = stage_sequence(&mut rng, n_epochs);
    let mut eeg = pink_noise(&mut rng, n);
    let mut eog = pink_noise(&mut rng, n);
    for v in eeg.iter_mut().chain(eog.iter_mut()) {
        *v *= spec.noise_std;
    }
    for (k, &stage) in labels.iter().enumerate() {
        let r = k * per..(k + 1) * per;
        let mut a = Epoch { x: &mut eeg[r.clone()], fs };
        let mut b = Epoch { x: &mut eog[r], fs };
        signature(stage, &mut rng, &mut a, &mut b);
    }
    let reference = pink_noise(&mut rng, n);
    let hp = [Biquad::highpass(10.0, fs, std::f64::consts::FRAC_1_SQRT_2)];
    for x in [&mut eeg, &mut eog] {
        let mut high = x.clone();
        lfilter(&hp, &mut high);
        for ((v, h), r) in x.iter_mut().zip(&high).zip(&reference) {
            *v = spec.gain * spec.polarity * (*v + spec.spectral_tilt * h) + spec.reference_offset * r;
        }
    }
    Ok(RawRecording { fs, eeg, eog, labels })
}

/// `n_recordings` preprocessed recordings of `n_epochs` epochs each.
pub fn synth_domain(spec: &DomainSpec, n_recordings: usize, n_epochs: usize, seed: u64) -> Result<Vec<Recording>> {
    (0..n_recordings)
        .map(|i| {
            let raw = synth_raw(spec, n_epochs, seed, i)?;
            Recording::from_raw(spec.domain_id, &raw.eeg, &raw.eog, raw.fs, &raw.labels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rows_are_distributions() {
        for row in TRANSITIONS {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pink_noise_is_normalised() {
        let x = pink_noise(&mut stream(1, "t"), 20_000);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn raw_lengths_follow_native_rate() {
        for spec in DomainSpec::defaults() {
            let r = synth_raw(&spec, 3, 0, 0).unwrap();
            assert_eq!(r.eeg.len(), 3 * 30 * spec.native_rate as usize);
            assert_eq!(r.labels.len(), 3);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = DomainSpec::defaults()[0].clone();
        s.native_rate = 150;
        assert!(s.validate().is_err());
        let mut s = DomainSpec::defaults()[0].clone();
        s.gain = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn config_from_text() {
        let c = SynthConfig::from_kv("seed = 3\nrecordings = 2\ndomain.1.gain = 4\ndomain.9.native_rate = 256\n").unwrap();
        assert_eq!((c.seed, c.recordings, c.epochs), (3, 2, 20));
        assert_eq!(c.domains[1].gain, 4.0);
        assert_eq!(c.domains[5].domain_id, 9);
        assert!(SynthConfig::from_kv("domain.1.colour = 2").is_err());
    }
}
