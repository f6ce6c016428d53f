//! Short-time Fourier transform with square-root Hann windows.
//!
//! Analysis and synthesis both use `sqrt(hann)`; their product is a periodic
//! Hann window, which sums to one at 50% overlap, so overlap-add needs no
//! normalization. The trailing partial frame is dropped.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::AudioBuffer;
use crate::error::{DsnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    /// `n_frames * n_bins` values, frame-major.
    pub frames: Vec<Complex64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub fft_size: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.frames[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.frames.iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of full frames in `n` samples.
pub fn frame_count(n: usize, fft_size: usize, hop: usize) -> usize {
    if n < fft_size {
        0
    } else {
        (n - fft_size) / hop + 1
    }
}

#[derive(Clone)]
pub struct StftEngine {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftEngine")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftEngine {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        if fft_size < 4 || !fft_size.is_multiple_of(2) {
            return Err(DsnError::invalid(format!("fft size {fft_size} must be even and >= 4")));
        }
        if hop * 2 != fft_size {
            return Err(DsnError::invalid(format!(
                "sqrt-Hann reconstruction needs 50% overlap, got fft {fft_size} hop {hop}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(StftEngine {
            fft_size,
            hop,
            window: hann(fft_size).into_iter().map(f64::sqrt).collect(),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Analyze one `fft_size` block into `n_bins` complex values.
    pub fn analyze_frame(&self, block: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(block.len(), self.fft_size);
        let mut buf: Vec<Complex64> = block
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex64::new(x * w, 0.0))
            .collect();
        self.forward.process(&mut buf);
        out.copy_from_slice(&buf[..self.n_bins()]);
    }

    /// Inverse-transform one frame and apply the synthesis window.
    pub fn synthesize_frame(&self, bins: &[Complex64], out: &mut [f64]) {
        let n = self.fft_size;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..bins.len()].copy_from_slice(bins);
        // Hermitian completion; DC and Nyquist imaginary parts are ignored
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = bins[k].conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        for ((o, c), &w) in out.iter_mut().zip(&buf).zip(&self.window) {
            *o = c.re * scale * w;
        }
    }

    pub fn stft(&self, audio: &AudioBuffer) -> Result<Spectrogram> {
        self.stft_samples(&audio.samples)
    }

    pub fn stft_samples(&self, samples: &[f64]) -> Result<Spectrogram> {
        if samples.len() < self.fft_size {
            return Err(DsnError::TooShort {
                needed: self.fft_size,
                got: samples.len(),
            });
        }
        let n_frames = frame_count(samples.len(), self.fft_size, self.hop);
        let n_bins = self.n_bins();
        let mut frames = vec![Complex64::new(0.0, 0.0); n_frames * n_bins];
        for t in 0..n_frames {
            let start = t * self.hop;
            self.analyze_frame(
                &samples[start..start + self.fft_size],
                &mut frames[t * n_bins..(t + 1) * n_bins],
            );
        }
        Ok(Spectrogram {
            frames,
            n_frames,
            n_bins,
            fft_size: self.fft_size,
            hop: self.hop,
        })
    }

    /// Overlap-add resynthesis; output has `hop * (T - 1) + fft_size` samples.
    pub fn istft(&self, spec: &Spectrogram) -> Result<AudioBuffer> {
        if spec.n_bins != self.n_bins() || spec.fft_size != self.fft_size {
            return Err(DsnError::shape(format!(
                "spectrogram has {} bins / fft {}, engine expects {} / {}",
                spec.n_bins,
                spec.fft_size,
                self.n_bins(),
                self.fft_size
            )));
        }
        let len = if spec.n_frames == 0 {
            0
        } else {
            self.hop * (spec.n_frames - 1) + self.fft_size
        };
        let mut out = vec![0.0; len];
        let mut frame = vec![0.0; self.fft_size];
        for t in 0..spec.n_frames {
            self.synthesize_frame(spec.frame(t), &mut frame);
            let start = t * self.hop;
            for (o, &v) in out[start..start + self.fft_size].iter_mut().zip(&frame) {
                *o += v;
            }
        }
        AudioBuffer::new(out, super::SAMPLE_RATE)
    }
}

/// Magnitude spectrogram with a plain Hann window, used by the multi-resolution
/// loss. Returns `(frames, bins, values)`.
pub fn hann_magnitudes(samples: &[f64], fft_size: usize, hop: usize) -> Result<(usize, usize, Vec<f64>)> {
    if samples.len() < fft_size {
        return Err(DsnError::TooShort {
            needed: fft_size,
            got: samples.len(),
        });
    }
    let window = hann(fft_size);
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let n_frames = frame_count(samples.len(), fft_size, hop);
    let n_bins = fft_size / 2 + 1;
    let mut mags = Vec::with_capacity(n_frames * n_bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for t in 0..n_frames {
        let block = &samples[t * hop..t * hop + fft_size];
        for ((b, &x), &w) in buf.iter_mut().zip(block).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        mags.extend(buf[..n_bins].iter().map(|c| c.norm()));
    }
    Ok((n_frames, n_bins, mags))
}
