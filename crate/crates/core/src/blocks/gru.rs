use super::{affine, DynLinear, ExecMode, Probe, Split};
use crate::error::{DsnError, Result};
use crate::policy::GateVector;
use crate::tensor::{sigmoid, Tensor};
use crate::weights::{ParamKind, ParamSource};

/// GRU cell. Gate columns are ordered `z | r | n` in both `w` (`[in, 3h]`)
/// and `u` (`[h, 3h]`).
#[derive(Clone, Debug)]
pub struct GruCell {
    input: usize,
    hidden: usize,
    w: Tensor,
    u: Tensor,
    b_i: Vec<f64>,
    b_h: Vec<f64>,
}

impl GruCell {
    pub fn new(w: Tensor, u: Tensor, b_i: Vec<f64>, b_h: Vec<f64>) -> Result<Self> {
        let (input, three_h) = match w.shape() {
            [i, c] if c % 3 == 0 => (*i, *c),
            s => return Err(DsnError::shape(format!("GRU input weights must be [in, 3h], got {s:?}"))),
        };
        let hidden = three_h / 3;
        if u.shape() != [hidden, three_h] || b_i.len() != three_h || b_h.len() != three_h {
            return Err(DsnError::shape(format!(
                "GRU recurrent weights {:?} and biases ({}, {}) do not match hidden size {hidden}",
                u.shape(),
                b_i.len(),
                b_h.len()
            )));
        }
        Ok(GruCell {
            input,
            hidden,
            w,
            u,
            b_i,
            b_h,
        })
    }

    pub fn build(src: &mut dyn ParamSource, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let w = src.take(&format!("{prefix}.w"), &[input, 3 * hidden], ParamKind::Weight)?;
        let u = src.take(&format!("{prefix}.u"), &[hidden, 3 * hidden], ParamKind::Weight)?;
        let b_i = src.take(&format!("{prefix}.b_i"), &[3 * hidden], ParamKind::Bias)?;
        let b_h = src.take(&format!("{prefix}.b_h"), &[3 * hidden], ParamKind::Bias)?;
        Self::new(w, u, b_i.into_data(), b_h.into_data())
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// MACs of the input-to-hidden path, bias included.
    pub fn input_macs(&self) -> usize {
        (self.input + 1) * 3 * self.hidden
    }

    /// MACs of the hidden-to-hidden path, bias included.
    pub fn recurrent_macs(&self) -> usize {
        (self.hidden + 1) * 3 * self.hidden
    }

    /// Ungated update.
    pub fn step(&self, x: &[f64], h_prev: &[f64], probe: &mut Probe, h_out: &mut [f64]) {
        self.step_gated(x, h_prev, 1.0, ExecMode::Slim, probe, h_out);
    }

    /// Update with the input-to-hidden path (matmul and its bias) scaled by
    /// `g`. The recurrent path always runs.
    pub fn step_gated(&self, x: &[f64], h_prev: &[f64], g: f64, mode: ExecMode, probe: &mut Probe, h_out: &mut [f64]) {
        let h = self.hidden;
        let mut gi = vec![0.0; 3 * h];
        if mode.runs_dynamic(g) {
            affine(x, self.w.data(), &self.b_i, &mut gi, probe);
            if g != 1.0 {
                gi.iter_mut().for_each(|v| *v *= g);
            }
        }
        let mut gh = vec![0.0; 3 * h];
        affine(h_prev, self.u.data(), &self.b_h, &mut gh, probe);
        for j in 0..h {
            let z = sigmoid(gi[j] + gh[j]);
            let r = sigmoid(gi[h + j] + gh[h + j]);
            let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
            h_out[j] = (1.0 - z) * n + z * h_prev[j];
        }
    }

    /// Checked single step of a time-transformer cell.
    pub fn time_step(&self, x: &[f64], h_prev: &[f64], g: f64, mode: ExecMode) -> Result<Vec<f64>> {
        if x.len() != self.input || h_prev.len() != self.hidden {
            return Err(DsnError::shape(format!(
                "GRU step expects x[{}] and h[{}], got x[{}] and h[{}]",
                self.input,
                self.hidden,
                x.len(),
                h_prev.len()
            )));
        }
        let mut h = vec![0.0; self.hidden];
        self.step_gated(x, h_prev, g, mode, &mut Probe::new(), &mut h);
        Ok(h)
    }
}

/// Bidirectional GRU over a short sequence, starting from zero state.
#[derive(Clone, Debug)]
pub struct BiGru {
    fwd: GruCell,
    bwd: GruCell,
}

impl BiGru {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(BiGru {
            fwd: GruCell::build(src, &format!("{prefix}.fwd"), input, hidden)?,
            bwd: GruCell::build(src, &format!("{prefix}.bwd"), input, hidden)?,
        })
    }

    pub fn cells(&self) -> (&GruCell, &GruCell) {
        (&self.fwd, &self.bwd)
    }

    pub fn output_size(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn step_macs(&self) -> usize {
        let c = &self.fwd;
        2 * (c.input_macs() + c.recurrent_macs())
    }

    /// `x` is `[n, in]`; `out` is `[n, 2h]` with forward states first.
    pub fn forward(&self, x: &[f64], probe: &mut Probe, out: &mut [f64]) {
        let (inp, h) = (self.fwd.input, self.fwd.hidden);
        let n = x.len() / inp;
        let mut state = vec![0.0; h];
        let mut next = vec![0.0; h];
        for i in 0..n {
            self.fwd.step(&x[i * inp..(i + 1) * inp], &state, probe, &mut next);
            std::mem::swap(&mut state, &mut next);
            out[i * 2 * h..i * 2 * h + h].copy_from_slice(&state);
        }
        state.iter_mut().for_each(|v| *v = 0.0);
        for i in (0..n).rev() {
            self.bwd.step(&x[i * inp..(i + 1) * inp], &state, probe, &mut next);
            std::mem::swap(&mut state, &mut next);
            out[i * 2 * h + h..(i + 1) * 2 * h].copy_from_slice(&state);
        }
    }
}

fn group_layout(channels: usize, n_groups: usize, dynamic_groups: usize) -> Result<usize> {
    if n_groups == 0 || !channels.is_multiple_of(n_groups) {
        return Err(DsnError::shape(format!(
            "{channels} channels cannot be split into {n_groups} groups"
        )));
    }
    if dynamic_groups > n_groups {
        return Err(DsnError::invalid(format!(
            "{dynamic_groups} dynamic groups exceed {n_groups} groups"
        )));
    }
    Ok(channels / n_groups)
}

fn gather_group(x: &[f64], rows: usize, channels: usize, offset: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&x[r * channels + offset..r * channels + offset + width]);
    }
    out
}

fn check_sequence(x: &Tensor, channels: usize, g: &GateVector) -> Result<(usize, usize)> {
    let (t_len, f, c) = match x.shape() {
        [t, f, c] => (*t, *f, *c),
        s => return Err(DsnError::shape(format!("block input must be [T, F, C], got {s:?}"))),
    };
    if c != channels {
        return Err(DsnError::shape(format!("block expects {channels} channels, got {c}")));
    }
    if g.len() != t_len {
        return Err(DsnError::shape(format!("gate has {} frames, input {t_len}", g.len())));
    }
    Ok((t_len, f))
}

/// Grouped bidirectional GRU over frequency followed by the mixing layer.
/// Static groups come first; the mix sees `[static outputs | dynamic outputs]`.
#[derive(Clone, Debug)]
pub struct FreqGruBlock {
    channels: usize,
    group_width: usize,
    static_groups: usize,
    groups: Vec<BiGru>,
    mix: DynLinear,
}

impl FreqGruBlock {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        channels: usize,
        n_groups: usize,
        dynamic_groups: usize,
    ) -> Result<Self> {
        let gw = group_layout(channels, n_groups, dynamic_groups)?;
        let groups = (0..n_groups)
            .map(|k| BiGru::build(src, &format!("{prefix}.group{k}"), gw, gw))
            .collect::<Result<Vec<_>>>()?;
        let static_groups = n_groups - dynamic_groups;
        let mix = DynLinear::build(
            src,
            &format!("{prefix}.mix"),
            Split::new(static_groups * 2 * gw, dynamic_groups * 2 * gw),
            Split::new(static_groups * gw, dynamic_groups * gw),
        )?;
        Ok(FreqGruBlock {
            channels,
            group_width: gw,
            static_groups,
            groups,
            mix,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> &[BiGru] {
        &self.groups
    }

    pub fn mix(&self) -> &DynLinear {
        &self.mix
    }

    /// Static and dynamic MACs per frequency bin.
    pub fn bin_macs(&self) -> (usize, usize) {
        let per_group = self.groups[0].step_macs();
        let dynamic_groups = self.groups.len() - self.static_groups;
        (
            self.static_groups * per_group + self.mix.static_macs(),
            dynamic_groups * per_group + self.mix.dynamic_macs(),
        )
    }

    /// One frame `[F, C]` to the mix output `[F, C]` (no residual).
    pub fn forward_frame(&self, x: &[f64], n_bins: usize, g: f64, mode: ExecMode, probe: &mut Probe, out: &mut [f64]) {
        let gw = self.group_width;
        let cat = 2 * gw * self.groups.len();
        let mut feat = vec![0.0; n_bins * cat];
        let mut buf = vec![0.0; n_bins * 2 * gw];
        let run_dynamic = mode.runs_dynamic(g);
        probe.record_gate(g);
        for (k, gru) in self.groups.iter().enumerate() {
            if k >= self.static_groups && !run_dynamic {
                continue;
            }
            let xin = gather_group(x, n_bins, self.channels, k * gw, gw);
            gru.forward(&xin, probe, &mut buf);
            for f in 0..n_bins {
                feat[f * cat + k * 2 * gw..f * cat + (k + 1) * 2 * gw]
                    .copy_from_slice(&buf[f * 2 * gw..(f + 1) * 2 * gw]);
            }
        }
        self.mix.forward_rows(&feat, g, mode, out, probe);
    }

    /// Whole sequence `[T, F, C]`; frames are independent.
    pub fn forward(&self, x: &Tensor, g: &GateVector, mode: ExecMode) -> Result<Tensor> {
        let (t_len, f) = check_sequence(x, self.channels, g)?;
        let frame = f * self.channels;
        let mut out = vec![0.0; t_len * frame];
        let mut probe = Probe::new();
        for t in 0..t_len {
            self.forward_frame(
                &x.data()[t * frame..(t + 1) * frame],
                f,
                g.values()[t],
                mode,
                &mut probe,
                &mut out[t * frame..(t + 1) * frame],
            );
        }
        Tensor::new(vec![t_len, f, self.channels], out)
    }
}

/// Per-bin, per-group hidden states of a [`TimeGruBlock`].
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGruState {
    n_bins: usize,
    n_groups: usize,
    hidden: usize,
    h: Vec<f64>,
}

impl TimeGruState {
    pub fn new(block: &TimeGruBlock, n_bins: usize) -> Self {
        let hidden = block.group_width;
        let n_groups = block.cells.len();
        TimeGruState {
            n_bins,
            n_groups,
            hidden,
            h: vec![0.0; n_bins * n_groups * hidden],
        }
    }

    pub fn hidden(&self, bin: usize, group: usize) -> &[f64] {
        let o = (bin * self.n_groups + group) * self.hidden;
        &self.h[o..o + self.hidden]
    }

    pub fn byte_size(&self) -> usize {
        self.h.len() * std::mem::size_of::<f64>()
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Grouped unidirectional GRU over time (one recurrence per bin). Dynamic
/// groups gate only their input-to-hidden paths, so their hidden states keep
/// evolving on skipped frames.
#[derive(Clone, Debug)]
pub struct TimeGruBlock {
    channels: usize,
    group_width: usize,
    static_groups: usize,
    cells: Vec<GruCell>,
    mix: DynLinear,
}

impl TimeGruBlock {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        channels: usize,
        n_groups: usize,
        dynamic_groups: usize,
    ) -> Result<Self> {
        let gw = group_layout(channels, n_groups, dynamic_groups)?;
        let cells = (0..n_groups)
            .map(|k| GruCell::build(src, &format!("{prefix}.group{k}"), gw, gw))
            .collect::<Result<Vec<_>>>()?;
        let static_groups = n_groups - dynamic_groups;
        let split = Split::new(static_groups * gw, dynamic_groups * gw);
        let mix = DynLinear::build(src, &format!("{prefix}.mix"), split, split)?;
        Ok(TimeGruBlock {
            channels,
            group_width: gw,
            static_groups,
            cells,
            mix,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cells(&self) -> &[GruCell] {
        &self.cells
    }

    pub fn mix(&self) -> &DynLinear {
        &self.mix
    }

    pub fn new_state(&self, n_bins: usize) -> TimeGruState {
        TimeGruState::new(self, n_bins)
    }

    /// Static and dynamic MACs per bin and frame. Recurrent paths of dynamic
    /// groups always run and count as static.
    pub fn bin_macs(&self) -> (usize, usize) {
        let c = &self.cells[0];
        let dynamic_groups = self.cells.len() - self.static_groups;
        (
            self.static_groups * (c.input_macs() + c.recurrent_macs())
                + dynamic_groups * c.recurrent_macs()
                + self.mix.static_macs(),
            dynamic_groups * c.input_macs() + self.mix.dynamic_macs(),
        )
    }

    /// Advance every bin by one frame; `out` receives the mix output.
    pub fn step_frame(
        &self,
        x: &[f64],
        g: f64,
        mode: ExecMode,
        state: &mut TimeGruState,
        probe: &mut Probe,
        out: &mut [f64],
    ) {
        let gw = self.group_width;
        let c = self.channels;
        let mut feat = vec![0.0; c];
        let mut next = vec![0.0; gw];
        probe.record_gate(g);
        for f in 0..state.n_bins {
            let xr = &x[f * c..(f + 1) * c];
            for (k, cell) in self.cells.iter().enumerate() {
                let o = (f * state.n_groups + k) * gw;
                let h_prev = &state.h[o..o + gw];
                let xin = &xr[k * gw..(k + 1) * gw];
                if k < self.static_groups {
                    cell.step(xin, h_prev, probe, &mut next);
                } else {
                    cell.step_gated(xin, h_prev, g, mode, probe, &mut next);
                }
                state.h[o..o + gw].copy_from_slice(&next);
                feat[k * gw..(k + 1) * gw].copy_from_slice(&next);
            }
            self.mix.forward_row(&feat, g, mode, &mut out[f * c..(f + 1) * c], probe);
        }
    }

    /// Whole sequence `[T, F, C]` from zero state.
    pub fn forward(&self, x: &Tensor, g: &GateVector, mode: ExecMode) -> Result<Tensor> {
        let (t_len, f) = check_sequence(x, self.channels, g)?;
        let frame = f * self.channels;
        let mut state = self.new_state(f);
        let mut out = vec![0.0; t_len * frame];
        let mut probe = Probe::new();
        for t in 0..t_len {
            self.step_frame(
                &x.data()[t * frame..(t + 1) * frame],
                g.values()[t],
                mode,
                &mut state,
                &mut probe,
                &mut out[t * frame..(t + 1) * frame],
            );
        }
        Tensor::new(vec![t_len, f, self.channels], out)
    }
}
