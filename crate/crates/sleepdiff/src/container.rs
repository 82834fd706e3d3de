//! SLPD recording container.
//!
//! One block per recording:
//!
//! ```text
//! "SLPD"  version:u32=1  n_epochs:u32  channels:u8=2  samples:u32=3000
//! rate_hz:u16=100  domain:u16  labels:u8[n_epochs]
//! f32 LE samples, epoch-major, then channel (EEG, EOG), then time
//! ```
//!
//! A domain file is a plain concatenation of blocks, so recording boundaries
//! survive a round trip.

use std::fs;
use std::path::Path;

use sleepdiff_core::data::{EpochRecord, Recording, Stage, EPOCH_SAMPLES};
use sleepdiff_core::dsp::TARGET_RATE;

use crate::format::{put_f32s, FormatError, Reader, Result};

pub const MAGIC: &[u8; 4] = b"SLPD";
pub const VERSION: u32 = 1;
/// Fixed header bytes before the label array.
pub const HEADER_BYTES: usize = 4 + 4 + 4 + 1 + 4 + 2 + 2;
pub const EPOCH_PAYLOAD_BYTES: usize = 2 * EPOCH_SAMPLES * 4;

pub fn encode_recording(rec: &Recording, out: &mut Vec<u8>) {
    let n = rec.epochs.len();
    out.reserve(HEADER_BYTES + n + n * EPOCH_PAYLOAD_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(2);
    out.extend_from_slice(&(EPOCH_SAMPLES as u32).to_le_bytes());
    out.extend_from_slice(&(TARGET_RATE as u16).to_le_bytes());
    out.extend_from_slice(&rec.domain.to_le_bytes());
    out.extend(rec.epochs.iter().map(|e| e.label as u8));
    for e in &rec.epochs {
        put_f32s(out, &e.eeg);
        put_f32s(out, &e.eog);
    }
}

pub fn encode(recordings: &[Recording]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in recordings {
        encode_recording(r, &mut out);
    }
    out
}

fn decode_block(r: &mut Reader<'_>) -> Result<Recording> {
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let n = r.u32("epoch count")? as usize;
    let channels = r.u8("channel count")?;
    let samples = r.u32("samples per epoch")? as usize;
    let rate = r.u16("sample rate")?;
    let domain = r.u16("domain id")?;
    if channels != 2 || samples != EPOCH_SAMPLES || rate as u32 != TARGET_RATE {
        return Err(FormatError::Invalid(format!(
            "expected 2 channels x {EPOCH_SAMPLES} samples at {TARGET_RATE} Hz, got {channels} x {samples} at {rate} Hz"
        )));
    }
    let labels = r.take(n, "labels")?.to_vec();
    let mut epochs = Vec::with_capacity(n);
    for &l in &labels {
        let label = Stage::try_from(l).map_err(|_| FormatError::Invalid(format!("label {l} out of range")))?;
        let eeg = r.f32s(EPOCH_SAMPLES, "samples")?;
        let eog = r.f32s(EPOCH_SAMPLES, "samples")?;
        epochs.push(EpochRecord { eeg, eog, label, domain });
    }
    Ok(Recording { domain, epochs })
}

/// Every block in `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Vec<Recording>> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::new();
    while !r.is_empty() {
        out.push(decode_block(&mut r)?);
    }
    Ok(out)
}

pub fn write_container(path: &Path, recordings: &[Recording]) -> Result<()> {
    fs::write(path, encode(recordings))?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Vec<Recording>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize, domain: u16) -> Recording {
        Recording {
            domain,
            epochs: (0..n)
                .map(|i| EpochRecord {
                    eeg: (0..EPOCH_SAMPLES).map(|t| (t as f32 * 0.37 + i as f32).sin()).collect(),
                    eog: (0..EPOCH_SAMPLES).map(|t| -(t as f32) * 1e-3).collect(),
                    label: Stage::ALL[i % 5],
                    domain,
                })
                .collect(),
        }
    }

    #[test]
    fn block_size_follows_layout() {
        let bytes = encode(&[rec(3, 7)]);
        assert_eq!(HEADER_BYTES, 21);
        assert_eq!(EPOCH_PAYLOAD_BYTES, 24_000);
        assert_eq!(bytes.len(), 21 + 3 + 3 * 24_000);
    }

    #[test]
    fn round_trip_keeps_recordings() {
        let recs = vec![rec(3, 7), rec(1, 7), rec(0, 7)];
        assert_eq!(decode(&encode(&recs)).unwrap(), recs);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&[rec(2, 1)]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(FormatError::BadVersion(9))));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated(_))));
        assert!(matches!(decode(&bytes[..10]), Err(FormatError::Truncated(_))));
    }
}
