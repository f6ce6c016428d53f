use std::borrow::Cow;

use super::{affine, gemv_acc, ExecMode, Probe, Split};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::weights::{ParamKind, ParamSource};

/// Dense layer split into four sublayers.
///
/// With input `[s | d]` (static-group and dynamic-group features) and gate
/// `g`, the two gating operations are
///
/// ```text
/// d'      = g * d                                  (gate 1)
/// out_s   = b_s + s W_ss + d' W_sd
/// out_d   = g * (b_d + s W_ds + d' W_dd)           (gate 2)
/// ```
///
/// so the static output never depends on anything but `s` when `g = 0`,
/// while the dynamic path sees both group sets.
#[derive(Clone, Debug)]
pub struct DynLinear {
    input: Split,
    output: Split,
    w_ss: Tensor,
    w_sd: Tensor,
    w_ds: Tensor,
    w_dd: Tensor,
    b_s: Vec<f64>,
    b_d: Vec<f64>,
}

impl DynLinear {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, input: Split, output: Split) -> Result<Self> {
        let (a_s, a_d) = (input.static_width, input.dynamic_width);
        let (b_s, b_d) = (output.static_width, output.dynamic_width);
        let mut w = |name: &str, rows: usize, cols: usize| {
            src.take(&format!("{prefix}.{name}"), &[rows, cols], ParamKind::Weight)
        };
        let w_ss = w("w_ss", a_s, b_s)?;
        let w_sd = w("w_sd", a_d, b_s)?;
        let w_ds = w("w_ds", a_s, b_d)?;
        let w_dd = w("w_dd", a_d, b_d)?;
        let b_s = src.take(&format!("{prefix}.b_s"), &[b_s], ParamKind::Bias)?;
        let b_d = src.take(&format!("{prefix}.b_d"), &[b_d], ParamKind::Bias)?;
        Ok(DynLinear {
            input,
            output,
            w_ss,
            w_sd,
            w_ds,
            w_dd,
            b_s: b_s.into_data(),
            b_d: b_d.into_data(),
        })
    }

    pub fn input(&self) -> Split {
        self.input
    }

    pub fn output(&self) -> Split {
        self.output
    }

    pub fn static_macs(&self) -> usize {
        self.input.static_width * self.output.static_width + self.output.static_width
    }

    pub fn dynamic_macs(&self) -> usize {
        let (a_s, a_d) = (self.input.static_width, self.input.dynamic_width);
        let (b_s, b_d) = (self.output.static_width, self.output.dynamic_width);
        a_d * b_s + a_s * b_d + a_d * b_d + b_d
    }

    /// One row. `x` is `[s | d]`; the `d` part is read only when the dynamic
    /// path runs. `out` is `[out_s | out_d]`.
    pub fn forward_row(&self, x: &[f64], g: f64, mode: ExecMode, out: &mut [f64], probe: &mut Probe) {
        let (s, d) = x.split_at(self.input.static_width);
        let (out_s, out_d) = out.split_at_mut(self.output.static_width);
        affine(s, self.w_ss.data(), &self.b_s, out_s, probe);
        if !mode.runs_dynamic(g) {
            out_d.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let gated: Cow<'_, [f64]> = if g == 1.0 {
            Cow::Borrowed(d)
        } else {
            Cow::Owned(d.iter().map(|v| g * v).collect())
        };
        gemv_acc(&gated, self.w_sd.data(), out_s, probe);
        affine(s, self.w_ds.data(), &self.b_d, out_d, probe);
        gemv_acc(&gated, self.w_dd.data(), out_d, probe);
        out_d.iter_mut().for_each(|v| *v *= g);
    }

    /// Row-wise over `rows` consecutive rows sharing one gate.
    pub fn forward_rows(&self, x: &[f64], g: f64, mode: ExecMode, out: &mut [f64], probe: &mut Probe) {
        let (a, b) = (self.input.total(), self.output.total());
        for (xr, or) in x.chunks_exact(a).zip(out.chunks_exact_mut(b)) {
            self.forward_row(xr, g, mode, or, probe);
        }
    }
}
