//! Dynamic-slimmable building blocks.
//!
//! Every block splits its work into a static part that always runs and a
//! dynamic part that a per-frame gate `g` controls. In [`ExecMode::Slim`] the
//! dynamic part of a frame with `g == 0` is never computed; in
//! [`ExecMode::MaskedDense`] everything is computed and the dynamic
//! contributions are multiplied by `g`. For binary gates both modes produce
//! the same numbers.
//!
//! Channel layout convention: feature vectors put static channels first and
//! dynamic channels after them.

mod attention;
mod conv;
mod gru;
mod linear;

pub use attention::{trapezoid_mask, AttentionAxis, DynMhaBlock, TimeAttentionState};
pub use conv::{ConvLayer, DynConvPair};
pub use gru::{BiGru, FreqGruBlock, GruCell, TimeGruBlock, TimeGruState};
pub use linear::DynLinear;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExecMode {
    /// Skip dynamic work for frames whose gate is zero.
    Slim,
    /// Compute everything, scale dynamic contributions by the gate.
    MaskedDense,
}

impl ExecMode {
    /// Whether the dynamic part of a frame gated by `g` is evaluated.
    #[inline]
    pub fn runs_dynamic(self, g: f64) -> bool {
        self == ExecMode::MaskedDense || g != 0.0
    }
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slim" => Ok(ExecMode::Slim),
            "masked" | "masked-dense" => Ok(ExecMode::MaskedDense),
            other => Err(format!("unknown mode `{other}` (slim|masked)")),
        }
    }
}

/// Runtime instrumentation threaded through every forward call: counts the
/// multiply-accumulates actually executed and, optionally, the gate value
/// each dynamic block was driven with.
#[derive(Clone, Debug, Default)]
pub struct Probe {
    macs: u64,
    gate_log: Option<Vec<f64>>,
}

impl Probe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_gate_log() -> Self {
        Probe {
            macs: 0,
            gate_log: Some(Vec::new()),
        }
    }

    #[inline]
    pub fn add(&mut self, macs: usize) {
        self.macs += macs as u64;
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn reset_macs(&mut self) -> u64 {
        std::mem::take(&mut self.macs)
    }

    #[inline]
    pub fn record_gate(&mut self, g: f64) {
        if let Some(log) = &mut self.gate_log {
            log.push(g);
        }
    }

    /// Drain the gates recorded since the last call.
    pub fn take_gate_log(&mut self) -> Vec<f64> {
        self.gate_log.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

/// `out = bias + x W`, counted.
#[inline]
pub(crate) fn affine(x: &[f64], w: &[f64], bias: &[f64], out: &mut [f64], probe: &mut Probe) {
    out.copy_from_slice(bias);
    crate::tensor::vec_mat_acc(x, w, out);
    probe.add(x.len() * out.len() + bias.len());
}

/// `out += x W`, counted.
#[inline]
pub(crate) fn gemv_acc(x: &[f64], w: &[f64], out: &mut [f64], probe: &mut Probe) {
    crate::tensor::vec_mat_acc(x, w, out);
    probe.add(x.len() * out.len());
}

/// Static/dynamic channel split of a width-`channels` stream with
/// `dynamic_groups` of `groups` groups dynamic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    pub static_width: usize,
    pub dynamic_width: usize,
}

impl Split {
    pub fn new(static_width: usize, dynamic_width: usize) -> Self {
        Split {
            static_width,
            dynamic_width,
        }
    }

    pub fn total(&self) -> usize {
        self.static_width + self.dynamic_width
    }
}
