use crate::error::{DsnError, Result};
use crate::policy::{GateVector, GatingLossConfig, MetricScore};
use crate::signal::{hann_magnitudes, AudioBuffer};

/// `(fft_size, hop)` pairs of the multi-resolution STFT loss.
pub const STFT_LOSS_RESOLUTIONS: [(usize, usize); 3] = [(256, 64), (512, 128), (1024, 256)];

const LOG_FLOOR: f64 = 1e-7;
const NORM_FLOOR: f64 = 1e-12;

/// Spectral convergence plus mean absolute log-magnitude difference, one
/// resolution. Signals shorter than the window are zero-padded to it.
fn resolution_loss(est: &[f64], reference: &[f64], fft: usize, hop: usize) -> Result<f64> {
    let pad = |x: &[f64]| {
        let mut v = x.to_vec();
        if v.len() < fft {
            v.resize(fft, 0.0);
        }
        v
    };
    let (_, _, e) = hann_magnitudes(&pad(est), fft, hop)?;
    let (_, _, r) = hann_magnitudes(&pad(reference), fft, hop)?;
    let diff: f64 = r.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = r.iter().map(|a| a * a).sum::<f64>().sqrt();
    let sc = diff / norm.max(NORM_FLOOR);
    let log_l1 = r
        .iter()
        .zip(&e)
        .map(|(a, b)| (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()).abs())
        .sum::<f64>()
        / r.len() as f64;
    Ok(sc + log_l1)
}

/// Mean over [`STFT_LOSS_RESOLUTIONS`] of spectral convergence plus
/// log-magnitude L1.
pub fn multi_res_stft_loss(est: &AudioBuffer, reference: &AudioBuffer) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(DsnError::shape(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let mut total = 0.0;
    for (fft, hop) in STFT_LOSS_RESOLUTIONS {
        total += resolution_loss(&est.samples, &reference.samples, fft, hop)?;
    }
    Ok(total / STFT_LOSS_RESOLUTIONS.len() as f64)
}

/// Terms of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub reconstruction: f64,
    pub gate: f64,
    pub gate_weight: f64,
    pub total: f64,
}

/// `L_multi_res + gate_weight * L_gate`.
pub fn total_objective(
    est: &AudioBuffer,
    reference: &AudioBuffer,
    g: &GateVector,
    loss: &GatingLossConfig,
    metric: Option<MetricScore>,
    gate_weight: f64,
) -> Result<Objective> {
    if !(gate_weight >= 0.0 && gate_weight.is_finite()) {
        return Err(DsnError::invalid(format!("gate weight {gate_weight} must be non-negative")));
    }
    let reconstruction = multi_res_stft_loss(est, reference)?;
    let gate = loss.loss(g, metric)?;
    Ok(Objective {
        reconstruction,
        gate,
        gate_weight,
        total: reconstruction + gate_weight * gate,
    })
}
