//! RIFF/WAVE reader and writer restricted to 16-bit PCM mono at 16 kHz.

use std::fs;
use std::path::Path;

use super::{AudioBuffer, SAMPLE_RATE};
use crate::error::{DsnError, Result};

const PCM: u16 = 1;
const BITS: u16 = 16;

fn unsupported(msg: String) -> DsnError {
    DsnError::UnsupportedFormat(msg)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse a WAV byte stream.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(unsupported("not a RIFF/WAVE file".into()));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| unsupported("truncated chunk".into()))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(unsupported("fmt chunk too short".into()));
                }
                fmt = Some((
                    u16_at(body, 0),
                    u16_at(body, 2),
                    u32_at(body, 4),
                    u16_at(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        at = body_end + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| unsupported("missing fmt chunk".into()))?;
    if format != PCM {
        return Err(unsupported(format!("unsupported sample format tag {format} (need PCM)")));
    }
    if channels != 1 {
        return Err(unsupported(format!("unsupported channel count: {channels}")));
    }
    if rate != SAMPLE_RATE {
        return Err(unsupported(format!("unsupported sample rate: {rate} Hz")));
    }
    if bits != BITS {
        return Err(unsupported(format!("unsupported bit depth: {bits}")));
    }
    let data = data.ok_or_else(|| unsupported("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    AudioBuffer::new(samples, rate)
}

/// Encode as a canonical 44-byte-header PCM-16 mono WAV.
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let n = audio.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&BITS.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &audio.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DsnError::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        DsnError::UnsupportedFormat(msg) => {
            DsnError::UnsupportedFormat(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(audio)).map_err(|e| DsnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, rate: u32, bits: u16) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&40u32.to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * channels as u32 * 2).to_le_bytes());
        b.extend_from_slice(&(channels * 2).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&[0, 0, 0, 0]);
        b
    }

    #[test]
    fn sine_round_trip_within_one_lsb() {
        let samples: Vec<f64> = (0..16000)
            .map(|n| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        let audio = AudioBuffer::new(samples, 16000).unwrap();
        let back = decode_wav(&encode_wav(&audio)).unwrap();
        assert_eq!(back.samples.len(), audio.samples.len());
        let lsb = 1.0 / 32768.0;
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= lsb);
        }
    }

    #[test]
    fn header_is_canonical() {
        let audio = AudioBuffer::new(vec![0.0, 0.5, -0.5], 16000).unwrap();
        let bytes = encode_wav(&audio);
        assert_eq!(bytes.len(), 44 + 6);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 4), 42);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), 16384);
    }

    #[test]
    fn rejects_stereo_and_wrong_rate() {
        let err = decode_wav(&header(2, 16000, 16)).unwrap_err().to_string();
        assert!(err.contains("unsupported channel count"), "{err}");
        let err = decode_wav(&header(1, 44100, 16)).unwrap_err().to_string();
        assert!(err.contains("unsupported sample rate"), "{err}");
        let err = decode_wav(&header(1, 16000, 24)).unwrap_err().to_string();
        assert!(err.contains("bit depth"), "{err}");
        assert!(decode_wav(b"not a wav file").is_err());
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut b = header(1, 16000, 16);
        // splice a LIST chunk with odd size before fmt
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[1, 2, 3, 0]].concat();
        b.splice(12..12, list);
        let audio = decode_wav(&b).unwrap();
        assert_eq!(audio.samples, vec![0.0, 0.0]);
    }
}
