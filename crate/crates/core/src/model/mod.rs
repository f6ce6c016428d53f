//! The full network: encoder convolutions, gating policy, transformer stack,
//! decoder with skip connections and the sigmoid mask head.
//!
//! Inference always runs one STFT frame at a time through
//! [`DsnModel::step_frame`]; the utterance-level and streaming entry points
//! differ only in how frames are fed in and how overlap-add is done.

mod config;
mod loss;
mod stream;

pub use config::{BinLadder, BlockKind, ModelConfig};
pub use loss::{multi_res_stft_loss, total_objective, Objective, STFT_LOSS_RESOLUTIONS};
pub use stream::{StreamOutput, StreamState, StreamingEnhancer};

use rustfft::num_complex::Complex64;

use crate::blocks::{
    AttentionAxis, ConvLayer, DynConvPair, DynMhaBlock, ExecMode, FreqGruBlock, Probe, TimeGruBlock,
};
use crate::error::{DsnError, Result};
use crate::policy::{frame_features, hard_gate, GateMode, GateVector, PolicyParams};
use crate::signal::{apply_mask_frame, AudioBuffer, Spectrogram, StftEngine};
use crate::tensor::{sigmoid, vec_mat_acc, Tensor};
use crate::weights::{LoadedParams, ParamKind, ParamSource, SeededParams, WeightStore};

/// Where a model's parameters come from.
#[derive(Clone, Debug)]
pub enum Init {
    Seed(u64),
    Weights(WeightStore),
}

#[derive(Clone, Debug)]
enum StackBlock {
    Freq { mha: DynMhaBlock, gru: FreqGruBlock },
    Time { mha: DynMhaBlock, gru: TimeGruBlock },
}

/// Result of an utterance-level forward pass.
#[derive(Clone, Debug)]
pub struct Enhanced {
    pub audio: AudioBuffer,
    /// Gate applied to each frame.
    pub gates: GateVector,
    /// Compressed-domain mask, `[T, F]`.
    pub mask: Tensor,
    /// Multiply-accumulates executed.
    pub macs: u64,
}

#[derive(Clone, Debug)]
pub struct DsnModel {
    config: ModelConfig,
    bins: BinLadder,
    stft: StftEngine,
    conv1: ConvLayer,
    conv2: ConvLayer,
    conv3: DynConvPair,
    policy: PolicyParams,
    stack: Vec<StackBlock>,
    deconv3: DynConvPair,
    deconv2: ConvLayer,
    deconv1: ConvLayer,
    mask_w: Tensor,
    mask_b: Vec<f64>,
    weights: WeightStore,
}

impl DsnModel {
    pub fn build(config: ModelConfig, init: Init) -> Result<Self> {
        config.validate()?;
        match init {
            Init::Seed(seed) => {
                let mut src = SeededParams::new(seed);
                let mut model = Self::wire(config, &mut src)?;
                model.weights = src.into_store();
                model.log_size();
                Ok(model)
            }
            Init::Weights(store) => {
                let mut src = LoadedParams::new(&store);
                let mut model = Self::wire(config, &mut src)?;
                src.finish()?;
                model.weights = store;
                model.log_size();
                Ok(model)
            }
        }
    }

    /// Build with fresh parameters drawn from `config.seed`.
    pub fn seeded(config: ModelConfig) -> Result<Self> {
        let seed = config.seed;
        Self::build(config, Init::Seed(seed))
    }

    fn log_size(&self) {
        let b = self.bins;
        log::info!(
            "dsn model: {} parameters in {} tensors; bins {} -> {} -> {} -> {}; layout {}",
            self.weights.total_params(),
            self.weights.len(),
            b.f0,
            b.f1,
            b.f2,
            b.f3,
            self.config.layout
        );
    }

    fn wire(config: ModelConfig, src: &mut dyn ParamSource) -> Result<Self> {
        let bins = config.bins();
        let stft = StftEngine::new(config.fft_size, config.hop)?;
        let [c0, c1, c2] = config.channels;
        let has_dynamic = config.dynamic_groups > 0;
        let conv1 = ConvLayer::build(src, "enc.conv1", 1, c0, false)?;
        let conv2 = ConvLayer::build(src, "enc.conv2", c0, c1, false)?;
        let policy = PolicyParams::build(src, "policy", c1, config.tau)?;
        let conv3 = DynConvPair::build(src, "enc.conv3", c1, c2, false, has_dynamic)?;
        let mut stack = Vec::new();
        for (i, kind) in config.block_kinds()?.into_iter().enumerate() {
            let prefix = format!("stack{i}");
            let axis = match kind {
                BlockKind::Freq => AttentionAxis::Frequency,
                BlockKind::Time => AttentionAxis::Time {
                    max_ctx: config.max_ctx_frames,
                },
            };
            let mha = DynMhaBlock::build(
                src,
                &format!("{prefix}.mha"),
                c2,
                config.n_heads,
                config.dynamic_heads(),
                axis,
            )?;
            let gru_prefix = format!("{prefix}.gru");
            stack.push(match kind {
                BlockKind::Freq => StackBlock::Freq {
                    mha,
                    gru: FreqGruBlock::build(src, &gru_prefix, c2, config.n_groups, config.dynamic_groups)?,
                },
                BlockKind::Time => StackBlock::Time {
                    mha,
                    gru: TimeGruBlock::build(src, &gru_prefix, c2, config.n_groups, config.dynamic_groups)?,
                },
            });
        }
        let deconv3 = DynConvPair::build(src, "dec.deconv3", c2, c1, true, has_dynamic)?;
        let deconv2 = ConvLayer::build(src, "dec.deconv2", 2 * c1, c0, true)?;
        let deconv1 = ConvLayer::build(src, "dec.deconv1", 2 * c0, 1, true)?;
        let mask_w = src.take("mask.weight", &[bins.f0, bins.f0], ParamKind::Weight)?;
        let mask_b = src.take("mask.bias", &[bins.f0], ParamKind::Bias)?.into_data();
        Ok(DsnModel {
            config,
            bins,
            stft,
            conv1,
            conv2,
            conv3,
            policy,
            stack,
            deconv3,
            deconv2,
            deconv1,
            mask_w,
            mask_b,
            weights: WeightStore::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bins(&self) -> BinLadder {
        self.bins
    }

    pub fn stft(&self) -> &StftEngine {
        &self.stft
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    /// Every parameter, in build order.
    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.total_params()
    }

    /// Number of gated modules, each of which reports the frame gate once per
    /// frame to a gate-logging [`Probe`].
    pub fn dynamic_module_count(&self) -> usize {
        if self.config.dynamic_groups == 0 {
            return 0;
        }
        2 + 2 * self.stack.len()
    }

    /// Whether a named parameter belongs to a dynamic branch, i.e. its
    /// contribution is gated away when `g = 0`.
    pub fn is_dynamic_param(&self, name: &str) -> bool {
        if name.contains(".dynamic.") {
            return true;
        }
        if [".w_sd", ".w_ds", ".w_dd", ".b_d"].iter().any(|s| name.ends_with(s)) {
            return true;
        }
        let static_groups = self.config.n_groups - self.config.dynamic_groups;
        name.split('.')
            .filter_map(|part| part.strip_prefix("group"))
            .filter_map(|k| k.parse::<usize>().ok())
            .any(|k| k >= static_groups)
    }

    pub fn new_stream_state(&self) -> StreamState {
        StreamState::new(self)
    }

    /// Run one STFT frame through the network. Returns the compressed-domain
    /// mask (`F` values) and the gate used. The policy always runs; `gate`
    /// replaces its decision when given.
    pub fn step_frame(
        &self,
        bins: &[Complex64],
        gate: Option<f64>,
        mode: ExecMode,
        state: &mut StreamState,
        probe: &mut Probe,
    ) -> Result<(Vec<f64>, f64)> {
        let b = self.bins;
        let [c0, c1, c2] = self.config.channels;
        if bins.len() != b.f0 {
            return Err(DsnError::shape(format!("frame has {} bins, model expects {}", bins.len(), b.f0)));
        }
        let c = self.config.compression;
        let x0: Vec<f64> = bins.iter().map(|z| z.norm().powf(c)).collect();

        let mut e1 = vec![0.0; b.f1 * c0];
        self.conv1.forward_frame(&state.prev_x0, &x0, b.f0, &mut e1, probe);
        relu(&mut e1);
        let mut e2 = vec![0.0; b.f2 * c1];
        self.conv2.forward_frame(&state.prev_e1, &e1, b.f1, &mut e2, probe);
        relu(&mut e2);

        let mut feats = vec![0.0; 2 * c1];
        frame_features(&e2, b.f2, c1, &mut feats);
        let (_, logits) = self.policy.frame_forward(&feats);
        probe.add(self.policy.frame_macs());
        let g = match gate {
            Some(g) if (0.0..=1.0).contains(&g) => g,
            Some(g) => return Err(DsnError::invalid(format!("gate value {g} outside [0, 1]"))),
            None => hard_gate(logits),
        };

        let mut z = vec![0.0; b.f3 * c2];
        self.conv3.forward_frame(&state.prev_e2, &e2, b.f2, g, mode, &mut z, probe);
        relu(&mut z);

        let mut delta = vec![0.0; z.len()];
        let mut time_index = 0;
        for block in &self.stack {
            match block {
                StackBlock::Freq { mha, gru } => {
                    mha.freq_frame(&z, b.f3, g, mode, probe, &mut delta);
                    add_into(&mut z, &delta);
                    gru.forward_frame(&z, b.f3, g, mode, probe, &mut delta);
                    add_into(&mut z, &delta);
                }
                StackBlock::Time { mha, gru } => {
                    let (attn, hidden) = state.time_states(time_index);
                    mha.time_step(&z, g, mode, attn, probe, &mut delta);
                    add_into(&mut z, &delta);
                    gru.step_frame(&z, g, mode, hidden, probe, &mut delta);
                    add_into(&mut z, &delta);
                    time_index += 1;
                }
            }
        }

        let mut d3 = vec![0.0; b.f2 * c1];
        self.deconv3.forward_frame(&state.prev_z, &z, b.f3, g, mode, &mut d3, probe);
        relu(&mut d3);
        let cat2 = interleave(&d3, c1, &e2, c1, b.f2);
        let mut d2 = vec![0.0; b.f1 * c0];
        self.deconv2.forward_frame(&state.prev_cat2, &cat2, b.f2, &mut d2, probe);
        relu(&mut d2);
        let cat1 = interleave(&d2, c0, &e1, c0, b.f1);
        let mut d1 = vec![0.0; b.f0];
        self.deconv1.forward_frame(&state.prev_cat1, &cat1, b.f1, &mut d1, probe);

        let mut mask = self.mask_b.clone();
        vec_mat_acc(&d1, self.mask_w.data(), &mut mask);
        probe.add(b.f0 * b.f0 + b.f0);
        mask.iter_mut().for_each(|m| *m = sigmoid(*m));

        state.prev_x0 = x0;
        state.prev_e1 = e1;
        state.prev_e2 = e2;
        state.prev_z = z;
        state.prev_cat2 = cat2;
        state.prev_cat1 = cat1;
        state.frames += 1;
        Ok((mask, g))
    }

    /// Enhance a whole utterance.
    pub fn forward_utterance(
        &self,
        noisy: &AudioBuffer,
        mode: ExecMode,
        gate_override: Option<&GateVector>,
    ) -> Result<Enhanced> {
        self.forward_with_probe(noisy, mode, gate_override, &mut Probe::new())
    }

    /// [`Self::forward_utterance`] with caller-owned instrumentation.
    pub fn forward_with_probe(
        &self,
        noisy: &AudioBuffer,
        mode: ExecMode,
        gate_override: Option<&GateVector>,
        probe: &mut Probe,
    ) -> Result<Enhanced> {
        let spec = self.stft.stft(noisy)?;
        if let Some(o) = gate_override {
            if o.len() != spec.n_frames {
                return Err(DsnError::shape(format!(
                    "gate override has {} frames, input has {}",
                    o.len(),
                    spec.n_frames
                )));
            }
        }
        let start = probe.macs();
        let mut state = self.new_stream_state();
        let mut masked = Spectrogram {
            frames: spec.frames.clone(),
            ..spec.clone()
        };
        let mut mask = Vec::with_capacity(spec.frames.len());
        let mut gates = Vec::with_capacity(spec.n_frames);
        for t in 0..spec.n_frames {
            let gate = gate_override.map(|o| o.values()[t]);
            let (m, g) = self.step_frame(spec.frame(t), gate, mode, &mut state, probe)?;
            let f = spec.n_bins;
            apply_mask_frame(spec.frame(t), &m, self.config.compression, &mut masked.frames[t * f..(t + 1) * f]);
            mask.extend(m);
            gates.push(g);
        }
        let mut samples = self.stft.istft(&masked)?.samples;
        samples.resize(noisy.len(), 0.0);
        let gate_mode = gate_override.map_or(GateMode::Hard, GateVector::mode);
        Ok(Enhanced {
            audio: AudioBuffer::new(samples, noisy.sample_rate)?,
            gates: GateVector::new(gates, gate_mode)?,
            mask: Tensor::new(vec![spec.n_frames, spec.n_bins], mask)?,
            macs: probe.macs() - start,
        })
    }

    /// Process one analysis window (`fft_size` samples, advancing by `hop`
    /// between calls) and emit the next `hop` finished output samples.
    pub fn forward_streaming(
        &self,
        frame: &[f64],
        gate: Option<f64>,
        mode: ExecMode,
        state: &mut StreamState,
    ) -> Result<StreamOutput> {
        self.stream_frame(frame, gate, mode, state, &mut Probe::new())
    }

    pub(crate) fn stream_frame(
        &self,
        frame: &[f64],
        gate: Option<f64>,
        mode: ExecMode,
        state: &mut StreamState,
        probe: &mut Probe,
    ) -> Result<StreamOutput> {
        let n = self.config.fft_size;
        if frame.len() != n {
            return Err(DsnError::shape(format!("stream frame has {} samples, expected {n}", frame.len())));
        }
        let mut bins = vec![Complex64::new(0.0, 0.0); self.bins.f0];
        self.stft.analyze_frame(frame, &mut bins);
        let (mask, g) = self.step_frame(&bins, gate, mode, state, probe)?;
        let mut masked = bins.clone();
        apply_mask_frame(&bins, &mask, self.config.compression, &mut masked);
        let mut synth = vec![0.0; n];
        self.stft.synthesize_frame(&masked, &mut synth);
        Ok(StreamOutput {
            samples: state.overlap_add(&synth),
            g,
        })
    }
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d);
}

/// Per-bin channel concatenation `[a | b]` of two `[F, ·]` maps.
fn interleave(a: &[f64], ca: usize, b: &[f64], cb: usize, n_bins: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_bins * (ca + cb));
    for f in 0..n_bins {
        out.extend_from_slice(&a[f * ca..(f + 1) * ca]);
        out.extend_from_slice(&b[f * cb..(f + 1) * cb]);
    }
    out
}
