use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::policy::{GatingLossConfig, LossMode};
use crate::signal::SAMPLE_RATE;
use crate::tensor::{conv_out_bins, deconv_out_bins};

/// One transformer block of the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Attention and GRU run across the bins of a frame.
    Freq,
    /// Attention and GRU run per bin across frames.
    Time,
}

/// Model hyper-parameters. Every field has a default, so a TOML file only
/// needs the keys it changes; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    /// Magnitude compression exponent `c`.
    pub compression: f64,
    /// Output channels of the three encoder convolutions.
    pub channels: [usize; 3],
    pub n_groups: usize,
    /// How many of `n_groups` are dynamic; heads follow the same ratio.
    pub dynamic_groups: usize,
    pub n_heads: usize,
    pub max_ctx_frames: usize,
    /// Transformer stack, one letter per block: `F` frequency, `T` time.
    pub layout: String,
    pub tau: f64,
    pub theta: f64,
    pub lambda: f64,
    /// Weight of the gating term in the training objective.
    pub gate_weight: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sample_rate: SAMPLE_RATE,
            fft_size: 512,
            hop: 256,
            compression: 0.3,
            channels: [16, 32, 32],
            n_groups: 4,
            dynamic_groups: 2,
            n_heads: 4,
            max_ctx_frames: 63,
            layout: "FTFTFT".to_string(),
            tau: 0.5,
            theta: 0.5,
            lambda: 0.5,
            gate_weight: 1.0,
            seed: 0,
        }
    }
}

/// Frequency bins at each encoder depth: input, after conv1, conv2, conv3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinLadder {
    pub f0: usize,
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| DsnError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DsnError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            DsnError::Config(msg) => DsnError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DsnError::Config(msg));
        if self.sample_rate != SAMPLE_RATE {
            return bad(format!("sample_rate must be {SAMPLE_RATE}, got {}", self.sample_rate));
        }
        if self.fft_size < 16 || !self.fft_size.is_multiple_of(2) {
            return bad(format!("fft_size {} must be even and at least 16", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return bad(format!("hop {} must be in 1..={}", self.hop, self.fft_size));
        }
        if !(self.compression > 0.0 && self.compression.is_finite()) {
            return bad(format!("compression {} must be positive", self.compression));
        }
        if self.channels.contains(&0) {
            return bad(format!("channels {:?} must all be positive", self.channels));
        }
        let c = self.channels[2];
        if self.channels[1] != c {
            return bad(format!(
                "conv2 and conv3 widths must match ({} vs {c})",
                self.channels[1]
            ));
        }
        if self.n_groups == 0 || !c.is_multiple_of(self.n_groups) {
            return bad(format!("{c} channels cannot form {} groups", self.n_groups));
        }
        if self.dynamic_groups > self.n_groups {
            return bad(format!(
                "dynamic_groups {} exceeds n_groups {}",
                self.dynamic_groups, self.n_groups
            ));
        }
        if self.n_heads == 0 || !c.is_multiple_of(self.n_heads) {
            return bad(format!("{c} channels cannot form {} heads", self.n_heads));
        }
        if !(self.n_heads * self.dynamic_groups).is_multiple_of(self.n_groups) {
            return bad(format!(
                "{} heads cannot follow a {}/{} dynamic split",
                self.n_heads, self.dynamic_groups, self.n_groups
            ));
        }
        if self.max_ctx_frames == 0 {
            return bad("max_ctx_frames must be positive".to_string());
        }
        self.block_kinds()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta {} outside [0, 1]", self.theta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if !(self.gate_weight >= 0.0 && self.gate_weight.is_finite()) {
            return bad(format!("gate_weight {} must be non-negative", self.gate_weight));
        }
        let l = self.bins();
        for (fine, coarse) in [(l.f0, l.f1), (l.f1, l.f2), (l.f2, l.f3)] {
            if deconv_out_bins(coarse) != fine {
                return bad(format!(
                    "fft_size {} gives {fine} bins, which the decoder cannot mirror",
                    self.fft_size
                ));
            }
        }
        Ok(())
    }

    pub fn block_kinds(&self) -> Result<Vec<BlockKind>> {
        if self.layout.is_empty() {
            return Err(DsnError::Config("layout must name at least one block".into()));
        }
        self.layout
            .chars()
            .map(|ch| match ch {
                'F' | 'f' => Ok(BlockKind::Freq),
                'T' | 't' => Ok(BlockKind::Time),
                other => Err(DsnError::Config(format!("layout letter `{other}` is not F or T"))),
            })
            .collect()
    }

    pub fn bins(&self) -> BinLadder {
        let f0 = self.fft_size / 2 + 1;
        let f1 = conv_out_bins(f0);
        let f2 = conv_out_bins(f1);
        BinLadder {
            f0,
            f1,
            f2,
            f3: conv_out_bins(f2),
        }
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn dynamic_heads(&self) -> usize {
        self.n_heads * self.dynamic_groups / self.n_groups
    }

    pub fn gating_loss(&self, mode: LossMode) -> Result<GatingLossConfig> {
        match mode {
            LossMode::Standard => GatingLossConfig::standard(self.theta),
            LossMode::MetricGuided => GatingLossConfig::metric_guided(self.lambda),
        }
    }
}
