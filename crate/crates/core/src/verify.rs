//! Built-in verification suites: slimming equivalence, causality,
//! streaming against offline processing, and the policy gradient check.
//! The command-line `selftest` and `gradcheck` commands run these.

use crate::blocks::ExecMode;
use crate::error::Result;
use crate::model::{DsnModel, Init, ModelConfig};
use crate::policy::{
    policy_grad, policy_loss, sample_gumbel_noise, GateMode, GateVector, GatingLossConfig, MetricScore,
    PolicyParams,
};
use crate::signal::{frame_count, AudioBuffer};
use crate::tensor::{SeededRng, Tensor};
use crate::weights::SeededParams;

/// Pass/fail result of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

pub const SLIM_REL_TOL: f64 = 1e-5;
pub const STREAM_ABS_TOL: f64 = 1e-9;
pub const GRAD_REL_TOL: f64 = 1e-6;
pub const GRAD_STEP: f64 = 1e-5;

/// Uniform noise in `[-0.5, 0.5)`.
pub fn seeded_noise(seed: u64, samples: usize) -> AudioBuffer {
    let mut rng = SeededRng::new(seed);
    let x = (0..samples).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
    AudioBuffer::new(x, crate::signal::SAMPLE_RATE).expect("finite noise")
}

/// `max |a - b| / max |b|`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Slim against MaskedDense with random binary gate overrides, one model
/// per seed. Returns the worst relative waveform error.
pub fn slimming_equivalence(config: &ModelConfig, seeds: &[u64], seconds: f64) -> Result<(CheckOutcome, f64)> {
    let n = (seconds * config.sample_rate as f64) as usize;
    let frames = frame_count(n, config.fft_size, config.hop);
    let mut worst = 0.0f64;
    for &seed in seeds {
        let model = DsnModel::build(config.clone(), Init::Seed(seed))?;
        let x = seeded_noise(seed.wrapping_add(1_000), n);
        let g = GateVector::bernoulli(frames, 0.5, &mut SeededRng::new(seed.wrapping_add(2_000)));
        let slim = model.forward_utterance(&x, ExecMode::Slim, Some(&g))?;
        let dense = model.forward_utterance(&x, ExecMode::MaskedDense, Some(&g))?;
        worst = worst.max(max_rel_diff(&slim.audio.samples, &dense.audio.samples));
    }
    let ok = worst <= SLIM_REL_TOL;
    Ok((
        CheckOutcome::new(
            "slimming equivalence",
            ok,
            format!("{} models, max rel err {worst:.3e} (tol {SLIM_REL_TOL:e})", seeds.len()),
        ),
        worst,
    ))
}

/// Perturb every input sample from `n` on and require bit-identical output
/// before `n - (fft_size - 1)`, in Slim mode with policy gating.
pub fn causality(config: &ModelConfig, seed: u64, seconds: f64) -> Result<CheckOutcome> {
    let model = DsnModel::build(config.clone(), Init::Seed(seed))?;
    let len = (seconds * config.sample_rate as f64) as usize;
    let x = seeded_noise(seed, len);
    let base = model.forward_utterance(&x, ExecMode::Slim, None)?;
    let mut rng = SeededRng::new(seed ^ 0x5eed);
    let mut failures = Vec::new();
    for n in [config.fft_size + 3, len / 2, len - config.hop - 1] {
        let mut y = x.samples.clone();
        y[n..].iter_mut().for_each(|v| *v += rng.uniform_in(-1.0, 1.0));
        let out = model.forward_utterance(&AudioBuffer::new(y, x.sample_rate)?, ExecMode::Slim, None)?;
        let safe = n.saturating_sub(config.fft_size - 1);
        if out.audio.samples[..safe] != base.audio.samples[..safe] {
            failures.push(format!("output before {safe} changed when perturbing from {n}"));
        }
        let safe_frames = frame_count(n, config.fft_size, config.hop);
        if out.gates.values()[..safe_frames] != base.gates.values()[..safe_frames] {
            failures.push(format!("gates of the first {safe_frames} frames changed"));
        }
    }
    let detail = if failures.is_empty() {
        "earlier output unchanged by later perturbations".to_string()
    } else {
        failures.join("; ")
    };
    Ok(CheckOutcome::new("causality", failures.is_empty(), detail))
}

/// Feed the analysis windows one at a time and compare with the offline
/// output. Returns the max absolute difference.
pub fn streaming_vs_offline(config: &ModelConfig, seed: u64, seconds: f64) -> Result<(CheckOutcome, f64)> {
    let model = DsnModel::build(config.clone(), Init::Seed(seed))?;
    let len = (seconds * config.sample_rate as f64) as usize;
    let x = seeded_noise(seed.wrapping_add(7), len);
    let offline = model.forward_utterance(&x, ExecMode::Slim, None)?;
    let mut state = model.new_stream_state();
    let mut streamed = Vec::with_capacity(len);
    let mut gates = Vec::new();
    let frames = frame_count(len, config.fft_size, config.hop);
    for t in 0..frames {
        let start = t * config.hop;
        let out = model.forward_streaming(&x.samples[start..start + config.fft_size], None, ExecMode::Slim, &mut state)?;
        streamed.extend(out.samples);
        gates.push(out.g);
    }
    streamed.extend_from_slice(state.tail());
    streamed.resize(len, 0.0);
    let diff = max_abs_diff(&streamed, &offline.audio.samples);
    let ok = diff <= STREAM_ABS_TOL && gates == offline.gates.values();
    Ok((
        CheckOutcome::new(
            "streaming vs offline",
            ok,
            format!("{frames} frames, max abs diff {diff:.3e} (tol {STREAM_ABS_TOL:e})"),
        ),
        diff,
    ))
}

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckResult {
    pub seed: u64,
    pub loss: f64,
    pub params: usize,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|)` over all
    /// parameters.
    pub max_rel_err: f64,
}

fn perturbed(params: &PolicyParams, index: usize, delta: f64) -> PolicyParams {
    let mut p = params.clone();
    let n1 = p.fc1_w.len();
    let n2 = n1 + p.fc1_b.len();
    let n3 = n2 + p.fc2_w.len();
    match index {
        i if i < n1 => p.fc1_w.data_mut()[i] += delta,
        i if i < n2 => p.fc1_b[i - n1] += delta,
        i if i < n3 => p.fc2_w.data_mut()[i - n2] += delta,
        i => p.fc2_b[i - n3] += delta,
    }
    p
}

/// Central-difference check of the analytic policy gradients. Even seeds
/// use the fixed-target loss, odd seeds the metric-guided one; targets are
/// set so the hinge is active.
pub fn policy_gradcheck(seed: u64, channels: usize, n_bins: usize, frames: usize) -> Result<GradcheckResult> {
    let mut rng = SeededRng::new(seed);
    let enc = rng.uniform_tensor(&[frames, n_bins, channels], 0.0, 1.0);
    let params = PolicyParams::build(&mut SeededParams::new(seed.wrapping_add(1)), "policy", channels, 0.5)?;
    let noise: Tensor = sample_gumbel_noise(&mut rng, frames);
    let (cfg, metric) = if seed.is_multiple_of(2) {
        let soft_mean = {
            let feats = crate::policy::policy_features(&enc, channels)?;
            let logits = params.logits(&feats)?;
            crate::policy::gumbel_softmax(&logits, params.tau, GateMode::Soft, Some(&noise))?.activation_ratio()
        };
        (GatingLossConfig::standard(0.5 * soft_mean)?, None)
    } else {
        (GatingLossConfig::metric_guided(0.5)?, Some(MetricScore::new(4.9)?))
    };
    let grads = policy_grad(&enc, &params, &noise, &cfg, metric, GateMode::Soft)?;
    let analytic = grads.flatten();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let up = policy_loss(&enc, &perturbed(&params, i, GRAD_STEP), &noise, &cfg, metric)?;
        let down = policy_loss(&enc, &perturbed(&params, i, -GRAD_STEP), &noise, &cfg, metric)?;
        numeric.push((up - down) / (2.0 * GRAD_STEP));
    }
    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = max_abs_diff(&analytic, &numeric);
    Ok(GradcheckResult {
        seed,
        loss: grads.loss,
        params: analytic.len(),
        max_rel_err: if diff == 0.0 { 0.0 } else { diff / scale },
    })
}

/// Run the three model suites on `config`.
pub fn selftest(config: &ModelConfig) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        slimming_equivalence(config, &[1, 2, 3], 0.5)?.0,
        causality(config, 4, 1.0)?,
        streaming_vs_offline(config, 5, 1.0)?.0,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            fft_size: 64,
            hop: 32,
            channels: [4, 8, 8],
            max_ctx_frames: 4,
            layout: "FT".into(),
            ..Default::default()
        }
    }

    #[test]
    fn suites_pass_on_a_tiny_model() {
        for outcome in selftest(&tiny()).unwrap() {
            assert!(outcome.passed, "{outcome}");
        }
    }

    #[test]
    fn gradcheck_within_tolerance() {
        for seed in [0, 1] {
            let r = policy_gradcheck(seed, 8, 9, 6).unwrap();
            assert!(r.loss > 0.0);
            assert!(r.max_rel_err <= GRAD_REL_TOL, "{r:?}");
        }
    }
}
