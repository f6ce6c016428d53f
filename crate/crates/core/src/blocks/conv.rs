use super::{ExecMode, Probe};
use crate::error::{DsnError, Result};
use crate::policy::GateVector;
use crate::tensor::{
    conv_frame, conv_out_bins, conv_transpose_frame, deconv_out_bins, Tensor, KERNEL_F, KERNEL_T,
};
use crate::weights::{ParamKind, ParamSource};

/// One causal (transposed) convolution with its bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    kernel: Tensor,
    bias: Vec<f64>,
    cin: usize,
    cout: usize,
    transpose: bool,
}

impl ConvLayer {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, cin: usize, cout: usize, transpose: bool) -> Result<Self> {
        let kernel = src.take(
            &format!("{prefix}.weight"),
            &[KERNEL_T, KERNEL_F, cin, cout],
            ParamKind::Weight,
        )?;
        let bias = src.take(&format!("{prefix}.bias"), &[cout], ParamKind::Bias)?;
        Ok(ConvLayer {
            kernel,
            bias: bias.into_data(),
            cin,
            cout,
            transpose,
        })
    }

    pub fn cin(&self) -> usize {
        self.cin
    }

    pub fn cout(&self) -> usize {
        self.cout
    }

    pub fn out_bins(&self, f_in: usize) -> usize {
        if self.transpose {
            deconv_out_bins(f_in)
        } else {
            conv_out_bins(f_in)
        }
    }

    /// Multiply-accumulates for one frame with `f_in` input bins.
    pub fn frame_macs(&self, f_in: usize) -> usize {
        let taps = KERNEL_T * KERNEL_F;
        if self.transpose {
            // every input element is scattered through the whole kernel
            f_in * self.cin * taps * self.cout + self.out_bins(f_in) * self.cout
        } else {
            self.out_bins(f_in) * self.cout * (taps * self.cin + 1)
        }
    }

    pub fn forward_frame(&self, prev: &[f64], cur: &[f64], f_in: usize, out: &mut [f64], probe: &mut Probe) {
        let kernel = self.kernel.data();
        if self.transpose {
            conv_transpose_frame(prev, cur, f_in, self.cin, kernel, &self.bias, out);
        } else {
            conv_frame(prev, cur, f_in, self.cin, kernel, &self.bias, out);
        }
        probe.add(self.frame_macs(f_in));
    }
}

/// Static convolution plus a gated dynamic twin on the same input:
/// `out_t = static(x)_t + g_t * dynamic(x)_t`.
#[derive(Clone, Debug)]
pub struct DynConvPair {
    static_conv: ConvLayer,
    dynamic_conv: Option<ConvLayer>,
}

impl DynConvPair {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        cin: usize,
        cout: usize,
        transpose: bool,
        with_dynamic: bool,
    ) -> Result<Self> {
        let static_conv = ConvLayer::build(src, &format!("{prefix}.static"), cin, cout, transpose)?;
        let dynamic_conv = if with_dynamic {
            Some(ConvLayer::build(src, &format!("{prefix}.dynamic"), cin, cout, transpose)?)
        } else {
            None
        };
        Ok(DynConvPair {
            static_conv,
            dynamic_conv,
        })
    }

    pub fn static_conv(&self) -> &ConvLayer {
        &self.static_conv
    }

    pub fn dynamic_conv(&self) -> Option<&ConvLayer> {
        self.dynamic_conv.as_ref()
    }

    pub fn cout(&self) -> usize {
        self.static_conv.cout
    }

    pub fn out_bins(&self, f_in: usize) -> usize {
        self.static_conv.out_bins(f_in)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward_frame(
        &self,
        prev: &[f64],
        cur: &[f64],
        f_in: usize,
        g: f64,
        mode: ExecMode,
        out: &mut [f64],
        probe: &mut Probe,
    ) {
        self.static_conv.forward_frame(prev, cur, f_in, out, probe);
        let Some(dynamic) = &self.dynamic_conv else {
            return;
        };
        probe.record_gate(g);
        if !mode.runs_dynamic(g) {
            return;
        }
        let mut tmp = vec![0.0; out.len()];
        dynamic.forward_frame(prev, cur, f_in, &mut tmp, probe);
        for (o, d) in out.iter_mut().zip(&tmp) {
            *o += g * d;
        }
    }

    /// Whole-sequence forward over `[T, F, Cin]`.
    pub fn forward(&self, x: &Tensor, g: &GateVector, mode: ExecMode) -> Result<Tensor> {
        let (t_len, f_in, cin) = match x.shape() {
            [t, f, c] => (*t, *f, *c),
            s => return Err(DsnError::shape(format!("conv pair input must be [T, F, C], got {s:?}"))),
        };
        if cin != self.static_conv.cin {
            return Err(DsnError::shape(format!(
                "conv pair expects {} channels, got {cin}",
                self.static_conv.cin
            )));
        }
        if g.len() != t_len {
            return Err(DsnError::shape(format!("gate has {} frames, input {t_len}", g.len())));
        }
        let f_out = self.out_bins(f_in);
        let cout = self.cout();
        let frame = f_in * cin;
        let zero = vec![0.0; frame];
        let mut out = vec![0.0; t_len * f_out * cout];
        let mut probe = Probe::new();
        for t in 0..t_len {
            let prev = if t == 0 { &zero[..] } else { &x.data()[(t - 1) * frame..t * frame] };
            let cur = &x.data()[t * frame..(t + 1) * frame];
            self.forward_frame(
                prev,
                cur,
                f_in,
                g.values()[t],
                mode,
                &mut out[t * f_out * cout..(t + 1) * f_out * cout],
                &mut probe,
            );
        }
        Tensor::new(vec![t_len, f_out, cout], out)
    }
}
