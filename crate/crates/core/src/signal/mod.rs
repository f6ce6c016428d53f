//! Audio I/O, STFT, compressed-magnitude masking and SI-SDR.

mod stft;
mod wav;

use rustfft::num_complex::Complex64;

pub use stft::{frame_count, hann, hann_magnitudes, Spectrogram, StftEngine};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use crate::error::{DsnError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_COMPRESSION: f64 = 0.3;
/// Returned by [`si_sdr`] when the estimate has no distortion at all.
pub const SI_SDR_CAP_DB: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(DsnError::UnsupportedFormat(format!(
                "unsupported sample rate: {sample_rate} Hz"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DsnError::NonFinite(format!("audio sample {i}")));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// `|X|^c` per time-frequency bin.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedMag {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub c: f64,
}

fn check_exponent(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(DsnError::invalid(format!("compression exponent {c} must be positive")))
    }
}

pub fn compress(mags: &[f64], n_frames: usize, n_bins: usize, c: f64) -> Result<CompressedMag> {
    check_exponent(c)?;
    if mags.len() != n_frames * n_bins {
        return Err(DsnError::shape(format!(
            "{} magnitudes for a {n_frames}x{n_bins} grid",
            mags.len()
        )));
    }
    if let Some(v) = mags.iter().find(|&&v| !(v >= 0.0)) {
        return Err(DsnError::invalid(format!("negative magnitude {v}")));
    }
    Ok(CompressedMag {
        values: mags.iter().map(|m| m.powf(c)).collect(),
        n_frames,
        n_bins,
        c,
    })
}

pub fn decompress(mag: &CompressedMag) -> Vec<f64> {
    let inv = 1.0 / mag.c;
    mag.values.iter().map(|v| v.powf(inv)).collect()
}

/// Apply a compressed-domain mask to one frame, keeping the noisy phase.
///
/// `(m |X|^c)^(1/c) = m^(1/c) |X|`, so the mask acts as a linear gain of
/// `m^(1/c)` on the complex bin.
pub fn apply_mask_frame(bins: &[Complex64], mask: &[f64], c: f64, out: &mut [Complex64]) {
    let inv = 1.0 / c;
    for ((o, x), &m) in out.iter_mut().zip(bins).zip(mask) {
        *o = x * m.powf(inv);
    }
}

pub fn apply_mask(noisy: &Spectrogram, mask: &[f64], c: f64) -> Result<Spectrogram> {
    check_exponent(c)?;
    if mask.len() != noisy.frames.len() {
        return Err(DsnError::shape(format!(
            "mask has {} values, spectrogram {}",
            mask.len(),
            noisy.frames.len()
        )));
    }
    if let Some(m) = mask.iter().find(|&&m| !(0.0..=1.0).contains(&m)) {
        return Err(DsnError::invalid(format!("mask value {m} outside [0, 1]")));
    }
    let mut out = noisy.clone();
    apply_mask_frame(&noisy.frames, mask, c, &mut out.frames);
    Ok(out)
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at
/// [`SI_SDR_CAP_DB`].
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(DsnError::shape(format!(
            "si_sdr length mismatch: {} vs {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(DsnError::invalid("si_sdr reference is all zeros"));
    }
    let alpha = estimate.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / ref_energy;
    let (mut target, mut noise) = (0.0, 0.0);
    for (&e, &r) in estimate.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        noise += (e - t) * (e - t);
    }
    // relative floor: residuals at rounding level count as a perfect match
    if noise <= target * 1e-20 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).min(SI_SDR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn compress_fixed_points_and_value() {
        let c = compress(&[0.0, 1.0, 0.5], 1, 3, 0.3).unwrap();
        assert_eq!(c.values[0], 0.0);
        assert_eq!(c.values[1], 1.0);
        // 0.5^0.3 = exp(0.3 ln 0.5) = 0.8122523963562356...
        assert!((c.values[2] - 0.812_252_396_356_235_6).abs() < 1e-15);
    }

    #[test]
    fn compress_rejects_negative() {
        assert!(compress(&[0.2, -0.1], 1, 2, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn compress_decompress_inverse_and_monotone(a in 1e-6f64..1e3, b in 1e-6f64..1e3) {
            let c = compress(&[a, b], 1, 2, 0.3).unwrap();
            let back = decompress(&c);
            prop_assert!(((back[0] - a) / a).abs() <= 1e-12);
            prop_assert!(((back[1] - b) / b).abs() <= 1e-12);
            if a < b {
                prop_assert!(c.values[0] < c.values[1]);
            }
        }
    }

    fn spectrogram(seed: u64) -> (StftEngine, AudioBuffer, Spectrogram) {
        let engine = StftEngine::new(512, 256).unwrap();
        let mut rng = SeededRng::new(seed);
        let x = AudioBuffer::new((0..4096).map(|_| rng.uniform_in(-0.5, 0.5)).collect(), 16000)
            .unwrap();
        let spec = engine.stft(&x).unwrap();
        (engine, x, spec)
    }

    #[test]
    fn unit_mask_is_identity() {
        let (_, _, spec) = spectrogram(1);
        let out = apply_mask(&spec, &vec![1.0; spec.frames.len()], 0.3).unwrap();
        assert_eq!(out, spec);
    }

    #[test]
    fn zero_mask_silences() {
        let (engine, _, spec) = spectrogram(2);
        let out = apply_mask(&spec, &vec![0.0; spec.frames.len()], 0.3).unwrap();
        assert!(out.frames.iter().all(|c| c.norm() == 0.0));
        let audio = engine.istft(&out).unwrap();
        assert!(audio.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mask_matches_compressed_domain_definition() {
        let (_, _, spec) = spectrogram(3);
        let mut rng = SeededRng::new(4);
        let mask: Vec<f64> = (0..spec.frames.len()).map(|_| rng.uniform()).collect();
        let out = apply_mask(&spec, &mask, 0.3).unwrap();
        let mags = spec.magnitudes();
        let comp = compress(&mags, spec.n_frames, spec.n_bins, 0.3).unwrap();
        let masked = CompressedMag {
            values: comp.values.iter().zip(&mask).map(|(v, m)| v * m).collect(),
            ..comp
        };
        let expected = decompress(&masked);
        for ((o, x), e) in out.frames.iter().zip(&spec.frames).zip(&expected) {
            assert!((o.norm() - e).abs() <= 1e-12 * e.max(1e-12));
            if e > &1e-9 {
                // phase retained
                assert!((o.arg() - x.arg()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mask_out_of_range_rejected() {
        let (_, _, spec) = spectrogram(5);
        let mut mask = vec![0.5; spec.frames.len()];
        mask[7] = 1.5;
        assert!(apply_mask(&spec, &mask, 0.3).is_err());
    }

    #[test]
    fn si_sdr_identity_and_scale() {
        let mut rng = SeededRng::new(6);
        let s: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
        assert_eq!(si_sdr(&s, &s).unwrap(), SI_SDR_CAP_DB);
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&doubled, &s).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn si_sdr_orthogonal_equal_power_is_zero_db() {
        // 10 whole periods: sin and cos are exactly orthogonal
        let n = 1600;
        let s: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / n as f64).sin()).collect();
        let e: Vec<f64> = (0..n)
            .map(|i| s[i] + (2.0 * PI * 10.0 * i as f64 / n as f64).cos())
            .collect();
        assert!(si_sdr(&e, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn si_sdr_errors() {
        assert!(si_sdr(&[1.0, 2.0], &[1.0]).is_err());
        assert!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }
}
