use super::{DynLinear, ExecMode, Probe, Split};
use crate::error::{DsnError, Result};
use crate::policy::GateVector;
use crate::tensor::{softmax_in_place, Tensor};
use crate::weights::ParamSource;

/// Axis the attention runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionAxis {
    /// Over the bins of one frame, unmasked.
    Frequency,
    /// Per bin over past frames, each query seeing at most `max_ctx` frames
    /// including its own.
    Time { max_ctx: usize },
}

/// `mask[t][t'] = 1` iff `0 <= t - t' < max_ctx`.
pub fn trapezoid_mask(t_len: usize, max_ctx: usize) -> Result<Tensor> {
    if max_ctx == 0 {
        return Err(DsnError::invalid("attention context must be at least one frame"));
    }
    let mut m = Tensor::zeros(&[t_len, t_len]);
    for t in 0..t_len {
        for s in t.saturating_sub(max_ctx - 1)..=t {
            m.set(&[t, s], 1.0);
        }
    }
    Ok(m)
}

/// Scaled dot-product attention of one query head over `(key, value)` head
/// slices; `out` is overwritten.
fn attend<'a>(
    q: &[f64],
    kv: impl Iterator<Item = (&'a [f64], &'a [f64])> + Clone,
    scale: f64,
    out: &mut [f64],
    probe: &mut Probe,
) {
    let mut scores: Vec<f64> = kv
        .clone()
        .map(|(k, _)| scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    softmax_in_place(&mut scores);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (w, (_, v)) in scores.iter().zip(kv) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o += w * vi;
        }
    }
    probe.add(2 * scores.len() * q.len());
}

/// Key/value history of a time-axis attention block: a ring of at most
/// `max_ctx` frames per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeAttentionState {
    n_bins: usize,
    max_ctx: usize,
    channels: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
    filled: usize,
    next: usize,
}

impl TimeAttentionState {
    pub fn new(n_bins: usize, max_ctx: usize, channels: usize) -> Self {
        let n = n_bins * max_ctx * channels;
        TimeAttentionState {
            n_bins,
            max_ctx,
            channels,
            keys: vec![0.0; n],
            values: vec![0.0; n],
            filled: 0,
            next: 0,
        }
    }

    /// Frames currently visible to the next query, including its own once pushed.
    pub fn context_len(&self) -> usize {
        self.filled
    }

    pub fn byte_size(&self) -> usize {
        (self.keys.len() + self.values.len()) * std::mem::size_of::<f64>()
    }

    pub fn reset(&mut self) {
        self.keys.iter_mut().for_each(|v| *v = 0.0);
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.filled = 0;
        self.next = 0;
    }

    fn push(&mut self, k: &[f64], v: &[f64]) {
        let c = self.channels;
        for f in 0..self.n_bins {
            let o = (f * self.max_ctx + self.next) * c;
            self.keys[o..o + c].copy_from_slice(&k[f * c..(f + 1) * c]);
            self.values[o..o + c].copy_from_slice(&v[f * c..(f + 1) * c]);
        }
        self.next = (self.next + 1) % self.max_ctx;
        self.filled = (self.filled + 1).min(self.max_ctx);
    }

    /// Slots of the visible frames, oldest first.
    fn slots(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        let start = (self.next + self.max_ctx - self.filled) % self.max_ctx;
        (0..self.filled).map(move |i| (start + i) % self.max_ctx)
    }
}

/// Multi-head attention whose heads are split into static and dynamic ones.
/// Each of the q/k/v/out projections is a [`DynLinear`], so with `g = 0` the
/// dynamic heads see zero queries, keys and values and contribute nothing.
#[derive(Clone, Debug)]
pub struct DynMhaBlock {
    channels: usize,
    n_heads: usize,
    static_heads: usize,
    head_dim: usize,
    axis: AttentionAxis,
    q: DynLinear,
    k: DynLinear,
    v: DynLinear,
    o: DynLinear,
}

impl DynMhaBlock {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        channels: usize,
        n_heads: usize,
        dynamic_heads: usize,
        axis: AttentionAxis,
    ) -> Result<Self> {
        if n_heads == 0 || !channels.is_multiple_of(n_heads) {
            return Err(DsnError::shape(format!(
                "embed dim {channels} is not divisible by {n_heads} heads"
            )));
        }
        if dynamic_heads > n_heads {
            return Err(DsnError::invalid(format!("{dynamic_heads} dynamic heads exceed {n_heads} heads")));
        }
        if let AttentionAxis::Time { max_ctx: 0 } = axis {
            return Err(DsnError::invalid("attention context must be at least one frame"));
        }
        let head_dim = channels / n_heads;
        let static_heads = n_heads - dynamic_heads;
        let split = Split::new(static_heads * head_dim, dynamic_heads * head_dim);
        let mut proj = |name: &str| DynLinear::build(src, &format!("{prefix}.{name}"), split, split);
        Ok(DynMhaBlock {
            channels,
            n_heads,
            static_heads,
            head_dim,
            axis,
            q: proj("q")?,
            k: proj("k")?,
            v: proj("v")?,
            o: proj("o")?,
        })
    }

    pub fn axis(&self) -> AttentionAxis {
        self.axis
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn static_heads(&self) -> usize {
        self.static_heads
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    /// `(q, k, v, o)` projections.
    pub fn projections(&self) -> [&DynLinear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn new_state(&self, n_bins: usize) -> Result<TimeAttentionState> {
        match self.axis {
            AttentionAxis::Time { max_ctx } => Ok(TimeAttentionState::new(n_bins, max_ctx, self.channels)),
            AttentionAxis::Frequency => Err(DsnError::invalid("frequency attention keeps no state")),
        }
    }

    /// Static and dynamic MACs per query position when it attends over `ctx`
    /// positions.
    pub fn bin_macs(&self, ctx: usize) -> (usize, usize) {
        let attn = 2 * ctx * self.head_dim;
        let dynamic_heads = self.n_heads - self.static_heads;
        (
            4 * self.q.static_macs() + self.static_heads * attn,
            4 * self.q.dynamic_macs() + dynamic_heads * attn,
        )
    }

    fn project(&self, x: &[f64], g: f64, mode: ExecMode, probe: &mut Probe) -> [Vec<f64>; 3] {
        let mut q = vec![0.0; x.len()];
        let mut k = vec![0.0; x.len()];
        let mut v = vec![0.0; x.len()];
        self.q.forward_rows(x, g, mode, &mut q, probe);
        self.k.forward_rows(x, g, mode, &mut k, probe);
        self.v.forward_rows(x, g, mode, &mut v, probe);
        [q, k, v]
    }

    fn active_heads(&self, g: f64, mode: ExecMode) -> usize {
        if mode.runs_dynamic(g) {
            self.n_heads
        } else {
            self.static_heads
        }
    }

    /// Frequency attention within one frame `[F, C]`; `out` gets the output
    /// projection (no residual).
    pub fn freq_frame(&self, x: &[f64], n_bins: usize, g: f64, mode: ExecMode, probe: &mut Probe, out: &mut [f64]) {
        let (c, hd) = (self.channels, self.head_dim);
        let scale = 1.0 / (hd as f64).sqrt();
        probe.record_gate(g);
        let [q, k, v] = self.project(x, g, mode, probe);
        let mut attn = vec![0.0; x.len()];
        for h in 0..self.active_heads(g, mode) {
            let r = h * hd..(h + 1) * hd;
            let kv = (0..n_bins).map(|j| (&k[j * c + r.start..j * c + r.end], &v[j * c + r.start..j * c + r.end]));
            for i in 0..n_bins {
                attend(&q[i * c + r.start..i * c + r.end], kv.clone(), scale, &mut attn[i * c + r.start..i * c + r.end], probe);
            }
        }
        self.o.forward_rows(&attn, g, mode, out, probe);
    }

    /// One causal time step for every bin of frame `x` (`[F, C]`).
    pub fn time_step(
        &self,
        x: &[f64],
        g: f64,
        mode: ExecMode,
        state: &mut TimeAttentionState,
        probe: &mut Probe,
        out: &mut [f64],
    ) {
        let (c, hd) = (self.channels, self.head_dim);
        let scale = 1.0 / (hd as f64).sqrt();
        probe.record_gate(g);
        let [q, k, v] = self.project(x, g, mode, probe);
        state.push(&k, &v);
        let mut attn = vec![0.0; x.len()];
        let ctx = state.max_ctx;
        for f in 0..state.n_bins {
            for h in 0..self.active_heads(g, mode) {
                let (a, b) = (h * hd, (h + 1) * hd);
                let kv = state.slots().map(|s| {
                    let o = (f * ctx + s) * c;
                    (&state.keys[o + a..o + b], &state.values[o + a..o + b])
                });
                attend(&q[f * c + a..f * c + b], kv, scale, &mut attn[f * c + a..f * c + b], probe);
            }
        }
        self.o.forward_rows(&attn, g, mode, out, probe);
    }

    /// Whole sequence `[T, F, C]` (time axis starts from an empty history).
    pub fn forward(&self, x: &Tensor, g: &GateVector, mode: ExecMode) -> Result<Tensor> {
        let (t_len, f, c) = match x.shape() {
            [t, f, c] => (*t, *f, *c),
            s => return Err(DsnError::shape(format!("attention input must be [T, F, C], got {s:?}"))),
        };
        if c != self.channels {
            return Err(DsnError::shape(format!("attention expects {} channels, got {c}", self.channels)));
        }
        if g.len() != t_len {
            return Err(DsnError::shape(format!("gate has {} frames, input {t_len}", g.len())));
        }
        let frame = f * c;
        let mut out = vec![0.0; t_len * frame];
        let mut probe = Probe::new();
        let mut state = match self.axis {
            AttentionAxis::Time { .. } => Some(self.new_state(f)?),
            AttentionAxis::Frequency => None,
        };
        for t in 0..t_len {
            let xt = &x.data()[t * frame..(t + 1) * frame];
            let ot = &mut out[t * frame..(t + 1) * frame];
            let gt = g.values()[t];
            match &mut state {
                Some(s) => self.time_step(xt, gt, mode, s, &mut probe, ot),
                None => self.freq_frame(xt, f, gt, mode, &mut probe, ot),
            }
        }
        Tensor::new(vec![t_len, f, c], out)
    }
}
