//! Epochs, recordings and fixed-length epoch sequences.

use alloc::vec::Vec;

use crate::dsp;
use crate::error::{dim_err, Error, Result};

pub const EPOCH_SAMPLES: usize = 3000;
pub const SEQ_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Stage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["W", "N1", "N2", "N3", "REM"][self.index()]
    }
}

impl TryFrom<u8> for Stage {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Stage::ALL.get(v as usize).copied().ok_or(Error::LabelOutOfRange { label: v as usize, classes: 5 })
    }
}

/// One 30 s two-channel epoch at 100 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub eeg: Vec<f32>,
    pub eog: Vec<f32>,
    pub label: Stage,
    pub domain: u16,
}

/// Time-ordered epochs of one night.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub domain: u16,
    pub epochs: Vec<EpochRecord>,
}

impl Recording {
    /// Preprocess whole-night channels sampled at `fs` Hz (band-pass,
    /// resample to 100 Hz, z-score) and cut them into labelled epochs.
    /// Samples past the last complete labelled epoch are dropped.
    pub fn from_raw(domain: u16, eeg: &[f64], eog: &[f64], fs: f64, labels: &[Stage]) -> Result<Self> {
        if eeg.len() != eog.len() {
            return Err(dim_err!("channels differ in length: {} vs {}", eeg.len(), eog.len()));
        }
        let eeg = dsp::preprocess(eeg, fs)?;
        let eog = dsp::preprocess(eog, fs)?;
        let n = labels.len().min(eeg.len() / EPOCH_SAMPLES);
        let cut = |x: &[f64], i: usize| x[i * EPOCH_SAMPLES..(i + 1) * EPOCH_SAMPLES].iter().map(|&v| v as f32).collect();
        let epochs = (0..n)
            .map(|i| EpochRecord { eeg: cut(&eeg, i), eog: cut(&eog, i), label: labels[i], domain })
            .collect();
        Ok(Self { domain, epochs })
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Start offsets of the non-overlapping `seq_len`-epoch windows of a
/// recording with `n_epochs` epochs. A trailing remainder is dropped.
pub fn assemble_sequences(n_epochs: usize, seq_len: usize) -> Vec<usize> {
    if n_epochs < seq_len {
        log::info!("recording with {n_epochs} epochs is shorter than one {seq_len}-epoch sequence; skipped");
    }
    (0..n_epochs / seq_len).map(|k| k * seq_len).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SequenceRef {
    pub recording: usize,
    pub start: usize,
}

/// All recordings of one domain and the sequences cut from them.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub domain: u16,
    pub recordings: Vec<Recording>,
    pub sequences: Vec<SequenceRef>,
}

impl DomainData {
    pub fn new(domain: u16, recordings: Vec<Recording>) -> Self {
        let sequences = recordings
            .iter()
            .enumerate()
            .flat_map(|(r, rec)| assemble_sequences(rec.len(), SEQ_LEN).into_iter().map(move |start| SequenceRef { recording: r, start }))
            .collect();
        Self { domain, recordings, sequences }
    }

    pub fn epochs(&self, s: SequenceRef) -> &[EpochRecord] {
        &self.recordings[s.recording].epochs[s.start..s.start + SEQ_LEN]
    }

    /// Append the `[SEQ_LEN, 2, EPOCH_SAMPLES]` samples and labels of `s`.
    pub fn write_sequence(&self, s: SequenceRef, x: &mut Vec<f32>, labels: &mut Vec<usize>) {
        for e in self.epochs(s) {
            x.extend_from_slice(&e.eeg);
            x.extend_from_slice(&e.eog);
            labels.push(e.label.index());
        }
    }

    pub fn n_epochs(&self) -> usize {
        self.recordings.iter().map(Recording::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sequence_windows() {
        assert_eq!(assemble_sequences(45, 20), vec![0, 20]);
        assert_eq!(assemble_sequences(20, 20), vec![0]);
        assert!(assemble_sequences(19, 20).is_empty());
    }

    #[test]
    fn sequences_stay_inside_recordings() {
        let rec = |n: usize| Recording {
            domain: 3,
            epochs: (0..n)
                .map(|i| EpochRecord { eeg: vec![i as f32; 3000], eog: vec![0.0; 3000], label: Stage::N2, domain: 3 })
                .collect(),
        };
        let d = DomainData::new(3, vec![rec(25), rec(41), rec(10)]);
        assert_eq!(
            d.sequences,
            vec![
                SequenceRef { recording: 0, start: 0 },
                SequenceRef { recording: 1, start: 0 },
                SequenceRef { recording: 1, start: 20 }
            ]
        );
        let (mut x, mut l) = (Vec::new(), Vec::new());
        d.write_sequence(d.sequences[2], &mut x, &mut l);
        assert_eq!(x.len(), 20 * 6000);
        assert_eq!(x[0], 20.0);
        assert_eq!(l, vec![2; 20]);
    }

    #[test]
    fn label_conversion() {
        assert_eq!(Stage::try_from(4).unwrap(), Stage::Rem);
        assert!(Stage::try_from(5).is_err());
    }
}
