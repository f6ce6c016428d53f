use super::{DsnModel, StackBlock};
use crate::blocks::{ExecMode, Probe, TimeAttentionState, TimeGruState};
use crate::error::Result;

/// Everything a model carries from one frame to the next. Its size depends
/// only on the model, never on how long the stream has run.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    pub(super) prev_x0: Vec<f64>,
    pub(super) prev_e1: Vec<f64>,
    pub(super) prev_e2: Vec<f64>,
    pub(super) prev_z: Vec<f64>,
    pub(super) prev_cat2: Vec<f64>,
    pub(super) prev_cat1: Vec<f64>,
    attention: Vec<TimeAttentionState>,
    hidden: Vec<TimeGruState>,
    ola_tail: Vec<f64>,
    pub(super) frames: usize,
}

impl StreamState {
    pub(super) fn new(model: &DsnModel) -> Self {
        let b = model.bins;
        let [c0, c1, c2] = model.config.channels;
        let mut attention = Vec::new();
        let mut hidden = Vec::new();
        for block in &model.stack {
            if let StackBlock::Time { mha, gru } = block {
                attention.push(mha.new_state(b.f3).expect("time block has a time axis"));
                hidden.push(gru.new_state(b.f3));
            }
        }
        StreamState {
            prev_x0: vec![0.0; b.f0],
            prev_e1: vec![0.0; b.f1 * c0],
            prev_e2: vec![0.0; b.f2 * c1],
            prev_z: vec![0.0; b.f3 * c2],
            prev_cat2: vec![0.0; b.f2 * 2 * c1],
            prev_cat1: vec![0.0; b.f1 * 2 * c0],
            attention,
            hidden,
            ola_tail: vec![0.0; model.config.hop],
            frames: 0,
        }
    }

    pub(super) fn time_states(&mut self, i: usize) -> (&mut TimeAttentionState, &mut TimeGruState) {
        (&mut self.attention[i], &mut self.hidden[i])
    }

    /// Add a synthesized frame to the running tail; returns the `hop`
    /// samples that no later frame will touch.
    pub(super) fn overlap_add(&mut self, synth: &[f64]) -> Vec<f64> {
        let hop = self.ola_tail.len();
        let out: Vec<f64> = self.ola_tail.iter().zip(&synth[..hop]).map(|(a, b)| a + b).collect();
        self.ola_tail.copy_from_slice(&synth[hop..]);
        out
    }

    /// Frames processed so far.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// The pending overlap-add tail: the last `hop` output samples, complete
    /// once no more frames will arrive.
    pub fn tail(&self) -> &[f64] {
        &self.ola_tail
    }

    pub fn byte_size(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        let vecs = [
            &self.prev_x0,
            &self.prev_e1,
            &self.prev_e2,
            &self.prev_z,
            &self.prev_cat2,
            &self.prev_cat1,
            &self.ola_tail,
        ];
        vecs.iter().map(|v| v.len() * f).sum::<usize>()
            + self.attention.iter().map(TimeAttentionState::byte_size).sum::<usize>()
            + self.hidden.iter().map(TimeGruState::byte_size).sum::<usize>()
    }
}

/// Output of one streaming step.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput {
    /// `hop` finished samples.
    pub samples: Vec<f64>,
    pub g: f64,
}

/// Sample-chunk front end over [`DsnModel::forward_streaming`]: accepts
/// arbitrary chunk sizes and buffers until a full window is available.
#[derive(Debug)]
pub struct StreamingEnhancer<'m> {
    model: &'m DsnModel,
    mode: ExecMode,
    state: StreamState,
    window: Vec<f64>,
    gates: Vec<f64>,
    probe: Probe,
}

impl<'m> StreamingEnhancer<'m> {
    pub fn new(model: &'m DsnModel, mode: ExecMode) -> Self {
        StreamingEnhancer {
            model,
            mode,
            state: model.new_stream_state(),
            window: Vec::with_capacity(model.config.fft_size),
            gates: Vec::new(),
            probe: Probe::new(),
        }
    }

    /// Feed samples; returns whatever output became final.
    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<f64>> {
        let n = self.model.config.fft_size;
        let hop = self.model.config.hop;
        let mut out = Vec::new();
        for &s in samples {
            self.window.push(s);
            if self.window.len() == n {
                let step = self
                    .model
                    .stream_frame(&self.window, None, self.mode, &mut self.state, &mut self.probe)?;
                out.extend(step.samples);
                self.gates.push(step.g);
                self.window.drain(..hop);
            }
        }
        Ok(out)
    }

    /// Flush the overlap-add tail. Samples still waiting for a full window
    /// are dropped, as in offline processing.
    pub fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let tail = if self.state.frames > 0 {
            self.state.tail().to_vec()
        } else {
            Vec::new()
        };
        (tail, self.gates)
    }

    pub fn gates(&self) -> &[f64] {
        &self.gates
    }

    pub fn macs(&self) -> u64 {
        self.probe.macs()
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;
    use crate::signal::AudioBuffer;
    use crate::tensor::SeededRng;

    fn model() -> DsnModel {
        DsnModel::seeded(ModelConfig {
            fft_size: 64,
            hop: 32,
            channels: [4, 8, 8],
            max_ctx_frames: 4,
            layout: "TF".into(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn chunked_streaming_equals_offline() {
        let m = model();
        let mut rng = SeededRng::new(1);
        let x: Vec<f64> = (0..1000).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let offline = m
            .forward_utterance(&AudioBuffer::new(x.clone(), 16_000).unwrap(), ExecMode::Slim, None)
            .unwrap();
        let mut s = StreamingEnhancer::new(&m, ExecMode::Slim);
        let mut y = Vec::new();
        for chunk in x.chunks(37) {
            y.extend(s.push(chunk).unwrap());
        }
        let (tail, gates) = s.finish();
        y.extend(tail);
        assert_eq!(gates, offline.gates.values());
        assert_eq!(&offline.audio.samples[..y.len()], &y[..]);
        assert!(offline.audio.samples[y.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_size_is_constant() {
        let m = model();
        let mut st = m.new_stream_state();
        let before = st.byte_size();
        let frame = vec![0.1; 64];
        for _ in 0..30 {
            m.forward_streaming(&frame, None, ExecMode::Slim, &mut st).unwrap();
        }
        assert_eq!(st.byte_size(), before);
        assert!(m.forward_streaming(&frame[..10], None, ExecMode::Slim, &mut st).is_err());
    }
}
