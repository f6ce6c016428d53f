//! Frame-wise gating policy and the gating regularizers.
//!
//! Per frame the policy summarizes the second encoder feature map by the
//! mean and standard deviation of every channel across frequency, maps that
//! through two dense layers (hidden width 16, `tanh`) to two logits
//! `[skip, activate]`, and turns the logits into a gate with a Gumbel-Softmax.
//! The gate is the activate-class probability.

use crate::error::{DsnError, Result};
use crate::tensor::{sigmoid, vec_mat_acc, SeededRng, Tensor};
use crate::weights::{ParamKind, ParamSource};

pub const SKIP: usize = 0;
pub const ACTIVATE: usize = 1;
pub const POLICY_HIDDEN: usize = 16;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    /// Relaxed gates in `[0, 1]`.
    Soft,
    /// Binary gates.
    Hard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateVector {
    values: Vec<f64>,
    mode: GateMode,
}

impl GateVector {
    pub fn new(values: Vec<f64>, mode: GateMode) -> Result<Self> {
        let ok = match mode {
            GateMode::Soft => values.iter().all(|g| (0.0..=1.0).contains(g)),
            GateMode::Hard => values.iter().all(|&g| g == 0.0 || g == 1.0),
        };
        if !ok {
            return Err(DsnError::invalid(format!(
                "gate values out of range for {mode:?} mode"
            )));
        }
        Ok(GateVector { values, mode })
    }

    pub fn constant(len: usize, on: bool) -> Self {
        GateVector {
            values: vec![if on { 1.0 } else { 0.0 }; len],
            mode: GateMode::Hard,
        }
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        GateVector {
            values: bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
            mode: GateMode::Hard,
        }
    }

    /// Independent Bernoulli(p) hard gates.
    pub fn bernoulli(len: usize, p: f64, rng: &mut SeededRng) -> Self {
        Self::from_bools((0..len).map(|_| rng.bernoulli(p)))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean of the gate over frames; NaN for an empty vector.
    pub fn activation_ratio(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Compact `0`/`1` string of a hard gate.
    pub fn to_bitstring(&self) -> String {
        self.values
            .iter()
            .map(|&g| if g >= 0.5 { '1' } else { '0' })
            .collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(DsnError::invalid(format!("bad gate character `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bools)
    }
}

/// Policy layer parameters; dense weights are stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub fc1_w: Tensor,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Tensor,
    pub fc2_b: Vec<f64>,
    pub tau: f64,
}

impl PolicyParams {
    pub fn new(fc1_w: Tensor, fc1_b: Vec<f64>, fc2_w: Tensor, fc2_b: Vec<f64>, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let in_dim = fc1_w.shape().first().copied().unwrap_or(0);
        if fc1_w.shape() != [in_dim, POLICY_HIDDEN]
            || fc1_b.len() != POLICY_HIDDEN
            || fc2_w.shape() != [POLICY_HIDDEN, 2]
            || fc2_b.len() != 2
        {
            return Err(DsnError::shape(format!(
                "policy layers must be {in_dim}->{POLICY_HIDDEN}->2, got fc1 {:?} fc2 {:?}",
                fc1_w.shape(),
                fc2_w.shape()
            )));
        }
        Ok(PolicyParams {
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            tau,
        })
    }

    pub fn build(src: &mut dyn ParamSource, prefix: &str, channels: usize, tau: f64) -> Result<Self> {
        let fc1_w = src.take(&format!("{prefix}.fc1.weight"), &[2 * channels, POLICY_HIDDEN], ParamKind::Weight)?;
        let fc1_b = src.take(&format!("{prefix}.fc1.bias"), &[POLICY_HIDDEN], ParamKind::Bias)?;
        let fc2_w = src.take(&format!("{prefix}.fc2.weight"), &[POLICY_HIDDEN, 2], ParamKind::Weight)?;
        let fc2_b = src.take(&format!("{prefix}.fc2.bias"), &[2], ParamKind::Bias)?;
        Self::new(fc1_w, fc1_b.into_data(), fc2_w, fc2_b.into_data(), tau)
    }

    /// Number of encoder channels the policy summarizes.
    pub fn channels(&self) -> usize {
        self.fc1_w.shape()[0] / 2
    }

    /// Hidden activations and logits for one feature row.
    pub fn frame_forward(&self, features: &[f64]) -> ([f64; POLICY_HIDDEN], [f64; 2]) {
        let mut hidden = [0.0; POLICY_HIDDEN];
        hidden.copy_from_slice(&self.fc1_b);
        vec_mat_acc(features, self.fc1_w.data(), &mut hidden);
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let mut logits = [self.fc2_b[0], self.fc2_b[1]];
        vec_mat_acc(&hidden, self.fc2_w.data(), &mut logits);
        (hidden, logits)
    }

    /// Multiply-accumulates of [`Self::frame_forward`], biases included.
    pub fn frame_macs(&self) -> usize {
        let in_dim = self.fc1_w.shape()[0];
        in_dim * POLICY_HIDDEN + POLICY_HIDDEN + POLICY_HIDDEN * 2 + 2
    }

    /// Logits `[T, 2]` for features `[T, 2C]`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let in_dim = self.fc1_w.shape()[0];
        let t_len = match features.shape() {
            [t, d] if *d == in_dim => *t,
            s => {
                return Err(DsnError::shape(format!(
                    "policy features must be [T, {in_dim}], got {s:?}"
                )))
            }
        };
        let mut out = Vec::with_capacity(t_len * 2);
        for row in features.data().chunks_exact(in_dim) {
            out.extend(self.frame_forward(row).1);
        }
        Tensor::new(vec![t_len, 2], out)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(DsnError::invalid(format!("temperature {tau} must be positive")))
    }
}

/// Per-frame `[mean; std]` of each channel over frequency for one `[F, C]`
/// frame. Population std.
pub fn frame_features(frame: &[f64], n_bins: usize, channels: usize, out: &mut [f64]) {
    debug_assert_eq!(frame.len(), n_bins * channels);
    debug_assert_eq!(out.len(), 2 * channels);
    let (mean, std) = out.split_at_mut(channels);
    mean.iter_mut().for_each(|m| *m = 0.0);
    std.iter_mut().for_each(|s| *s = 0.0);
    for row in frame.chunks_exact(channels) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = n_bins as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    for row in frame.chunks_exact(channels) {
        for ((s, &m), &v) in std.iter_mut().zip(mean.iter()).zip(row) {
            let d = v - m;
            *s += d * d;
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
}

/// `[T, F, C] -> [T, 2C]` frame statistics.
pub fn policy_features(enc: &Tensor, channels: usize) -> Result<Tensor> {
    let (t_len, n_bins, c) = match enc.shape() {
        [t, f, c] => (*t, *f, *c),
        s => return Err(DsnError::shape(format!("policy input must be [T, F, C], got {s:?}"))),
    };
    if c != channels {
        return Err(DsnError::shape(format!(
            "policy expects {channels} channels, got {c}"
        )));
    }
    let mut out = vec![0.0; t_len * 2 * c];
    for (frame, row) in enc
        .data()
        .chunks_exact(n_bins * c)
        .zip(out.chunks_exact_mut(2 * c))
    {
        frame_features(frame, n_bins, c, row);
    }
    Tensor::new(vec![t_len, 2 * c], out)
}

/// Hard decision from one pair of logits; ties resolve to skip.
#[inline]
pub fn hard_gate(logits: [f64; 2]) -> f64 {
    if logits[ACTIVATE] > logits[SKIP] {
        1.0
    } else {
        0.0
    }
}

/// Activate-class probability of a two-way Gumbel-Softmax.
#[inline]
pub fn soft_gate(logits: [f64; 2], noise: [f64; 2], tau: f64) -> f64 {
    let diff = (logits[ACTIVATE] + noise[ACTIVATE]) - (logits[SKIP] + noise[SKIP]);
    sigmoid(diff / tau)
}

/// Standard Gumbel noise `[T, 2]`.
pub fn sample_gumbel_noise(rng: &mut SeededRng, frames: usize) -> Tensor {
    let data = (0..frames * 2).map(|_| rng.gumbel()).collect();
    Tensor::new(vec![frames, 2], data).expect("gumbel samples are finite")
}

/// Soft mode needs noise; hard mode ignores logits scale and uses no noise.
pub fn gumbel_softmax(logits: &Tensor, tau: f64, mode: GateMode, noise: Option<&Tensor>) -> Result<GateVector> {
    check_tau(tau)?;
    let t_len = match logits.shape() {
        [t, 2] => *t,
        s => return Err(DsnError::shape(format!("logits must be [T, 2], got {s:?}"))),
    };
    let pairs = logits.data().chunks_exact(2).map(|p| [p[0], p[1]]);
    let values = match mode {
        GateMode::Hard => pairs.map(hard_gate).collect(),
        GateMode::Soft => {
            let noise = noise.ok_or_else(|| DsnError::invalid("soft gating requires Gumbel noise"))?;
            if noise.shape() != [t_len, 2] {
                return Err(DsnError::shape(format!(
                    "noise shape {:?} differs from logits {:?}",
                    noise.shape(),
                    logits.shape()
                )));
            }
            pairs
                .zip(noise.data().chunks_exact(2))
                .map(|(l, n)| soft_gate(l, [n[0], n[1]], tau))
                .collect()
        }
    };
    Ok(GateVector { values, mode })
}

/// DNS-MOS OVRL score of an utterance, in `[1, 5]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct MetricScore(f64);

impl MetricScore {
    pub fn new(m: f64) -> Result<Self> {
        if (1.0..=5.0).contains(&m) {
            Ok(MetricScore(m))
        } else {
            Err(DsnError::invalid(format!("OVRL score {m} outside [1, 5]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Fixed activation target `theta`.
    Standard,
    /// Target derived per utterance from its quality score.
    MetricGuided,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatingLossConfig {
    pub theta: f64,
    pub lambda: f64,
    pub mode: LossMode,
}

impl GatingLossConfig {
    pub fn standard(theta: f64) -> Result<Self> {
        let cfg = GatingLossConfig {
            theta,
            lambda: 1.0,
            mode: LossMode::Standard,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn metric_guided(lambda: f64) -> Result<Self> {
        let cfg = GatingLossConfig {
            theta: 0.0,
            lambda,
            mode: LossMode::MetricGuided,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(DsnError::invalid(format!("theta {} outside [0, 1]", self.theta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(DsnError::invalid(format!("lambda {} must be positive", self.lambda)));
        }
        Ok(())
    }

    /// Activation-ratio target for an utterance.
    pub fn target(&self, metric: Option<MetricScore>) -> Result<f64> {
        self.validate()?;
        match self.mode {
            LossMode::Standard => Ok(self.theta),
            LossMode::MetricGuided => {
                let m = metric.ok_or_else(|| {
                    DsnError::invalid("metric-guided gating loss needs an OVRL score")
                })?;
                map_ovrl_to_theta(m, self.lambda)
            }
        }
    }

    pub fn loss(&self, g: &GateVector, metric: Option<MetricScore>) -> Result<f64> {
        hinge(g, self.target(metric)?)
    }
}

fn hinge(g: &GateVector, target: f64) -> Result<f64> {
    if g.is_empty() {
        return Err(DsnError::invalid("empty gate vector"));
    }
    Ok((g.activation_ratio() - target).max(0.0))
}

/// `max(0, mean(g) - theta)`.
pub fn gate_loss(g: &GateVector, theta: f64) -> Result<f64> {
    GatingLossConfig::standard(theta)?;
    hinge(g, theta)
}

/// `lambda * (5 - m) / 4`, clipped to `[0, 1]`.
pub fn map_ovrl_to_theta(m: MetricScore, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DsnError::invalid(format!("lambda {lambda} must be positive")));
    }
    Ok((lambda * (5.0 - m.value()) / 4.0).clamp(0.0, 1.0))
}

/// `max(0, mean(g) - theta_m)`.
pub fn gate_loss_mgt(g: &GateVector, m: MetricScore, lambda: f64) -> Result<f64> {
    hinge(g, map_ovrl_to_theta(m, lambda)?)
}

/// Gradients of the gating loss with respect to every policy parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrads {
    pub loss: f64,
    pub fc1_w: Tensor,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Tensor,
    pub fc2_b: Vec<f64>,
}

impl PolicyGrads {
    /// All gradient entries in parameter order (fc1 w, fc1 b, fc2 w, fc2 b).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.fc1_w.data().to_vec();
        v.extend(&self.fc1_b);
        v.extend(self.fc2_w.data());
        v.extend(&self.fc2_b);
        v
    }
}

/// Soft-gated loss for fixed noise: the function [`policy_grad`] differentiates.
pub fn policy_loss(
    enc: &Tensor,
    params: &PolicyParams,
    noise: &Tensor,
    cfg: &GatingLossConfig,
    metric: Option<MetricScore>,
) -> Result<f64> {
    let feats = policy_features(enc, params.channels())?;
    let logits = params.logits(&feats)?;
    let g = gumbel_softmax(&logits, params.tau, GateMode::Soft, Some(noise))?;
    cfg.loss(&g, metric)
}

/// Analytic chain-rule gradients of the soft gating loss.
///
/// At the hinge kink (`mean(g) == target`) the inactive side is taken, so
/// every gradient is zero there.
pub fn policy_grad(
    enc: &Tensor,
    params: &PolicyParams,
    noise: &Tensor,
    cfg: &GatingLossConfig,
    metric: Option<MetricScore>,
    mode: GateMode,
) -> Result<PolicyGrads> {
    if mode == GateMode::Hard {
        return Err(DsnError::invalid("hard gating is not differentiable"));
    }
    let channels = params.channels();
    let feats = policy_features(enc, channels)?;
    let t_len = feats.shape()[0];
    if noise.shape() != [t_len, 2] {
        return Err(DsnError::shape(format!(
            "noise shape {:?}, expected [{t_len}, 2]",
            noise.shape()
        )));
    }
    let in_dim = 2 * channels;
    let tau = params.tau;

    let mut hiddens = Vec::with_capacity(t_len);
    let mut gates = Vec::with_capacity(t_len);
    for (row, n) in feats.data().chunks_exact(in_dim).zip(noise.data().chunks_exact(2)) {
        let (h, logits) = params.frame_forward(row);
        hiddens.push(h);
        gates.push(soft_gate(logits, [n[0], n[1]], tau));
    }
    let g = GateVector::new(gates, GateMode::Soft)?;
    let target = cfg.target(metric)?;
    let loss = hinge(&g, target)?;

    let mut fc1_w = vec![0.0; in_dim * POLICY_HIDDEN];
    let mut fc1_b = vec![0.0; POLICY_HIDDEN];
    let mut fc2_w = vec![0.0; POLICY_HIDDEN * 2];
    let mut fc2_b = vec![0.0; 2];
    if g.activation_ratio() > target {
        let w2 = params.fc2_w.data();
        for (t, row) in feats.data().chunks_exact(in_dim).enumerate() {
            let gt = g.values()[t];
            // dL/d(activate logit); the skip logit gets the negative
            let delta = gt * (1.0 - gt) / tau / t_len as f64;
            fc2_b[ACTIVATE] += delta;
            fc2_b[SKIP] -= delta;
            let h = &hiddens[t];
            let mut dpre = [0.0; POLICY_HIDDEN];
            for j in 0..POLICY_HIDDEN {
                fc2_w[j * 2 + ACTIVATE] += delta * h[j];
                fc2_w[j * 2 + SKIP] -= delta * h[j];
                let dh = delta * (w2[j * 2 + ACTIVATE] - w2[j * 2 + SKIP]);
                dpre[j] = dh * (1.0 - h[j] * h[j]);
                fc1_b[j] += dpre[j];
            }
            for (i, &f) in row.iter().enumerate() {
                for j in 0..POLICY_HIDDEN {
                    fc1_w[i * POLICY_HIDDEN + j] += f * dpre[j];
                }
            }
        }
    }
    Ok(PolicyGrads {
        loss,
        fc1_w: Tensor::new(vec![in_dim, POLICY_HIDDEN], fc1_w)?,
        fc1_b,
        fc2_w: Tensor::new(vec![POLICY_HIDDEN, 2], fc2_w)?,
        fc2_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::SeededParams;

    fn hard(values: &[f64]) -> GateVector {
        GateVector::new(values.to_vec(), GateMode::Hard).unwrap()
    }

    fn soft(values: &[f64]) -> GateVector {
        GateVector::new(values.to_vec(), GateMode::Soft).unwrap()
    }

    fn logits(pairs: &[[f64; 2]]) -> Tensor {
        Tensor::new(vec![pairs.len(), 2], pairs.concat()).unwrap()
    }

    #[test]
    fn gate_vector_validation() {
        assert!(GateVector::new(vec![0.0, 0.5], GateMode::Hard).is_err());
        assert!(GateVector::new(vec![1.2], GateMode::Soft).is_err());
        let g = GateVector::from_bitstring("0110").unwrap();
        assert_eq!(g.values(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(g.to_bitstring(), "0110");
        assert_eq!(g.activation_ratio(), 0.5);
    }

    #[test]
    fn features_of_constant_map() {
        let enc = Tensor::filled(&[3, 5, 32], 0.7);
        let f = policy_features(&enc, 32).unwrap();
        assert_eq!(f.shape(), &[3, 64]);
        for row in f.data().chunks_exact(64) {
            assert!(row[..32].iter().all(|&m| (m - 0.7).abs() < 1e-15));
            assert!(row[32..].iter().all(|&s| s.abs() < 1e-15));
        }
        assert!(policy_features(&Tensor::zeros(&[2, 5, 16]), 32).is_err());
    }

    #[test]
    fn features_match_naive_loop() {
        let mut rng = SeededRng::new(3);
        let enc = rng.uniform_tensor(&[4, 7, 32], -1.0, 1.0);
        let f = policy_features(&enc, 32).unwrap();
        for t in 0..4 {
            for c in 0..32 {
                let vals: Vec<f64> = (0..7).map(|k| enc.get(&[t, k, c])).collect();
                let mean = vals.iter().sum::<f64>() / 7.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
                assert!((f.get(&[t, c]) - mean).abs() < 1e-14);
                assert!((f.get(&[t, 32 + c]) - var.sqrt()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gumbel_softmax_examples() {
        let zero = Tensor::zeros(&[1, 2]);
        for tau in [0.1, 0.5, 2.0] {
            let g = gumbel_softmax(&logits(&[[0.3, 0.3]]), tau, GateMode::Soft, Some(&zero)).unwrap();
            assert_eq!(g.values(), &[0.5]);
        }
        let g = gumbel_softmax(&logits(&[[-10.0, 10.0]]), 0.5, GateMode::Hard, None).unwrap();
        assert_eq!(g.values(), &[1.0]);
        // (skip, activate) = (0, 1)
        let g = gumbel_softmax(&logits(&[[0.0, 1.0]]), 0.5, GateMode::Soft, Some(&zero)).unwrap();
        assert!((g.values()[0] - 0.880_797_077_977_882_4).abs() < 1e-15);
        assert!(gumbel_softmax(&logits(&[[0.0, 1.0]]), 0.0, GateMode::Hard, None).is_err());
        assert!(gumbel_softmax(&logits(&[[0.0, 1.0]]), 0.5, GateMode::Soft, None).is_err());
    }

    #[test]
    fn hard_tie_is_skip_and_shift_invariant() {
        let g = gumbel_softmax(&logits(&[[1.0, 1.0]]), 0.5, GateMode::Hard, None).unwrap();
        assert_eq!(g.values(), &[0.0]);
        let mut rng = SeededRng::new(4);
        for _ in 0..200 {
            let (a, b, shift) = (rng.normal(), rng.normal(), 100.0 * rng.normal());
            assert_eq!(hard_gate([a, b]), hard_gate([a + shift, b + shift]));
        }
    }

    #[test]
    fn soft_matches_two_class_softmax() {
        let mut rng = SeededRng::new(5);
        for _ in 0..100 {
            let l = [rng.normal(), rng.normal()];
            let n = [rng.gumbel(), rng.gumbel()];
            let g = soft_gate(l, n, 0.5);
            let mut p = [(l[0] + n[0]) / 0.5, (l[1] + n[1]) / 0.5];
            crate::tensor::softmax_in_place(&mut p);
            assert!((g - p[ACTIVATE]).abs() < 1e-15);
            assert_eq!(g + (1.0 - g), 1.0);
        }
    }

    #[test]
    fn low_temperature_approaches_hard() {
        let mut rng = SeededRng::new(6);
        for _ in 0..50 {
            let l = [rng.normal(), rng.normal()];
            let n = [rng.gumbel(), rng.gumbel()];
            let target = hard_gate([l[0] + n[0], l[1] + n[1]]);
            let errs: Vec<f64> = [0.5, 0.1, 0.01]
                .iter()
                .map(|&tau| (soft_gate(l, n, tau) - target).abs())
                .collect();
            assert!(errs[0] >= errs[1] && errs[1] >= errs[2], "{errs:?}");
        }
    }

    #[test]
    fn gate_loss_examples() {
        assert_eq!(gate_loss(&hard(&[0.0; 4]), 0.5).unwrap(), 0.0);
        assert_eq!(gate_loss(&hard(&[1.0; 4]), 0.5).unwrap(), 0.5);
        let g = soft(&[0.6; 5]);
        assert!((gate_loss(&g, 0.5).unwrap() - 0.1).abs() < 1e-15);
        assert!(gate_loss(&soft(&[]), 0.5).is_err());
        assert!(gate_loss(&g, 1.5).is_err());
    }

    #[test]
    fn ovrl_mapping_examples() {
        let m = |v| MetricScore::new(v).unwrap();
        assert_eq!(map_ovrl_to_theta(m(5.0), 0.5).unwrap(), 0.0);
        assert_eq!(map_ovrl_to_theta(m(1.0), 0.5).unwrap(), 0.5);
        assert_eq!(map_ovrl_to_theta(m(3.0), 1.0).unwrap(), 0.5);
        assert_eq!(map_ovrl_to_theta(m(1.0), 3.0).unwrap(), 1.0);
        assert!(MetricScore::new(0.5).is_err());
        assert!(MetricScore::new(5.1).is_err());
    }

    #[test]
    fn mgt_loss_examples() {
        let m = |v| MetricScore::new(v).unwrap();
        assert_eq!(gate_loss_mgt(&soft(&[0.5; 3]), m(1.0), 0.5).unwrap(), 0.0);
        assert_eq!(gate_loss_mgt(&soft(&[0.9; 3]), m(5.0), 0.5).unwrap(), 0.9);
        assert_eq!(gate_loss_mgt(&soft(&[0.6; 3]), m(3.0), 0.5).unwrap(), 0.6 - 0.25);
        let cfg = GatingLossConfig::metric_guided(0.5).unwrap();
        assert!(cfg.loss(&soft(&[0.6]), None).is_err());
    }

    fn random_params(seed: u64) -> PolicyParams {
        let mut src = SeededParams::new(seed);
        PolicyParams::build(&mut src, "policy", 32, DEFAULT_TAU).unwrap()
    }

    #[test]
    fn grad_zero_below_target() {
        let mut rng = SeededRng::new(7);
        let params = random_params(7);
        let enc = rng.uniform_tensor(&[5, 9, 32], -1.0, 1.0);
        let noise = sample_gumbel_noise(&mut rng, 5);
        let cfg = GatingLossConfig::standard(1.0).unwrap();
        let grads = policy_grad(&enc, &params, &noise, &cfg, None, GateMode::Soft).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(grads.loss, 0.0);
        assert!(policy_grad(&enc, &params, &noise, &cfg, None, GateMode::Hard).is_err());
    }

    #[test]
    fn grad_closed_form_single_frame() {
        let params = PolicyParams::new(
            Tensor::zeros(&[64, POLICY_HIDDEN]),
            vec![0.0; POLICY_HIDDEN],
            Tensor::zeros(&[POLICY_HIDDEN, 2]),
            vec![0.2, 0.2],
            0.5,
        )
        .unwrap();
        let enc = SeededRng::new(8).uniform_tensor(&[1, 9, 32], -1.0, 1.0);
        let noise = Tensor::zeros(&[1, 2]);
        let cfg = GatingLossConfig::standard(0.25).unwrap();
        let grads = policy_grad(&enc, &params, &noise, &cfg, None, GateMode::Soft).unwrap();
        // g = 0.5, dg/db_activate = g (1 - g) / tau
        assert_eq!(grads.loss, 0.25);
        assert!((grads.fc2_b[ACTIVATE] - 0.5).abs() < 1e-15);
        assert!((grads.fc2_b[SKIP] + 0.5).abs() < 1e-15);
    }
}
