//! Compute accounting: per-module MAC tables, effective MACs at a given
//! activation ratio, activation-ratio reports and wall-clock benchmarks.
//!
//! Convention: one MAC per multiply-accumulate of a matmul, convolution tap
//! or attention score/value product, plus one per bias element added.
//! Activations, softmax normalization, statistics and other elementwise work
//! are not counted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::blocks::ExecMode;
use crate::error::{DsnError, Result};
use crate::model::{BlockKind, DsnModel, ModelConfig};
use crate::policy::{GateVector, POLICY_HIDDEN};
use crate::signal::AudioBuffer;
use crate::tensor::{conv_out_bins, deconv_out_bins, SeededRng, KERNEL_F, KERNEL_T};

const TAPS: u64 = (KERNEL_T * KERNEL_F) as u64;

/// MACs of one module (summed over its instances) for one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacRow {
    pub name: String,
    pub static_per_frame: u64,
    pub dynamic_per_frame: u64,
}

impl MacRow {
    pub fn pct(&self) -> f64 {
        let total = self.static_per_frame + self.dynamic_per_frame;
        if total == 0 {
            0.0
        } else {
            100.0 * self.dynamic_per_frame as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacReport {
    pub rows: Vec<MacRow>,
    pub frames_per_second: f64,
}

impl MacReport {
    pub fn row(&self, name: &str) -> Option<&MacRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn static_per_frame(&self) -> u64 {
        self.rows.iter().map(|r| r.static_per_frame).sum()
    }

    pub fn dynamic_per_frame(&self) -> u64 {
        self.rows.iter().map(|r| r.dynamic_per_frame).sum()
    }

    /// MACs/s with every dynamic component skipped.
    pub fn zero_activation_macs_s(&self) -> f64 {
        self.static_per_frame() as f64 * self.frames_per_second
    }

    /// MACs/s with every dynamic component running.
    pub fn full_activation_macs_s(&self) -> f64 {
        (self.static_per_frame() + self.dynamic_per_frame()) as f64 * self.frames_per_second
    }

    /// MACs/s a module's dynamic part adds when active.
    pub fn delta_macs_s(&self, row: &MacRow) -> f64 {
        row.dynamic_per_frame as f64 * self.frames_per_second
    }

    pub fn total_delta_macs_s(&self) -> f64 {
        self.rows.iter().map(|r| self.delta_macs_s(r)).sum()
    }

    /// `block,static,dynamic,delta,pct`, one line per module; static and
    /// dynamic are MACs per frame, delta is MACs/s.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,static,dynamic,delta,pct\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.1},{:.2}",
                r.name,
                r.static_per_frame,
                r.dynamic_per_frame,
                self.delta_macs_s(r),
                r.pct()
            );
        }
        s
    }

    /// Human-readable delta table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>14} {:>14} {:>12} {:>7}",
            "module", "static M/s", "dynamic M/s", "delta M/s", "pct"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>14.3} {:>14.3} {:>12.3} {:>6.1}%",
                r.name,
                r.static_per_frame as f64 * self.frames_per_second / 1e6,
                r.dynamic_per_frame as f64 * self.frames_per_second / 1e6,
                self.delta_macs_s(r) / 1e6,
                r.pct()
            );
        }
        let _ = writeln!(s, "zero activation: {:.3} M MACs/s", self.zero_activation_macs_s() / 1e6);
        let _ = writeln!(s, "full activation: {:.3} M MACs/s", self.full_activation_macs_s() / 1e6);
        s
    }
}

fn conv_macs(f_in: usize, cin: usize, cout: usize) -> u64 {
    (conv_out_bins(f_in) * cout) as u64 * (TAPS * cin as u64 + 1)
}

fn deconv_macs(f_in: usize, cin: usize, cout: usize) -> u64 {
    (f_in * cin * cout) as u64 * TAPS + (deconv_out_bins(f_in) * cout) as u64
}

/// `(static, dynamic)` MACs of a split linear layer, per row.
fn dyn_linear_macs(a_s: usize, a_d: usize, b_s: usize, b_d: usize) -> (u64, u64) {
    ((a_s * b_s + b_s) as u64, (a_d * b_s + a_s * b_d + a_d * b_d + b_d) as u64)
}

/// Per-frame accounting derived from the configuration alone.
#[derive(Clone, Debug)]
struct Accountant {
    rows: Vec<MacRow>,
    /// Per time-attention block: static and dynamic MACs excluding the
    /// context-dependent part, and that part per context frame.
    time_attention: Option<TimeAttentionCost>,
}

#[derive(Clone, Copy, Debug)]
struct TimeAttentionCost {
    blocks: u64,
    fixed: (u64, u64),
    per_ctx: (u64, u64),
}

impl Accountant {
    fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let b = cfg.bins();
        let [c0, c1, c2] = cfg.channels;
        let has_dynamic = cfg.dynamic_groups > 0;
        let dyn_pair = |m: u64| if has_dynamic { m } else { 0 };
        let g = cfg.n_groups;
        let gd = cfg.dynamic_groups;
        let gw = c2 / g;
        let (s, d) = ((g - gd) * gw, gd * gw);
        let hd = c2 / cfg.n_heads;
        let (heads_s, heads_d) = (cfg.n_heads - cfg.dynamic_heads(), cfg.dynamic_heads());
        let f3 = b.f3 as u64;

        let proj = dyn_linear_macs(s, d, s, d);
        let attention = |ctx: usize| -> (u64, u64) {
            let per = (2 * ctx * hd) as u64;
            (
                f3 * (4 * proj.0 + heads_s as u64 * per),
                f3 * (4 * proj.1 + heads_d as u64 * per),
            )
        };
        let gate_path = (3 * gw * (gw + 1)) as u64;
        let fmix = dyn_linear_macs(2 * s, 2 * d, s, d);
        let fgru = (
            f3 * ((g - gd) as u64 * 4 * gate_path + fmix.0),
            f3 * (gd as u64 * 4 * gate_path + fmix.1),
        );
        let tmix = dyn_linear_macs(s, d, s, d);
        let tgru = (
            f3 * ((g - gd) as u64 * 2 * gate_path + gd as u64 * gate_path + tmix.0),
            f3 * (gd as u64 * gate_path + tmix.1),
        );

        let kinds = cfg.block_kinds()?;
        let n_f = kinds.iter().filter(|k| **k == BlockKind::Freq).count() as u64;
        let n_t = kinds.len() as u64 - n_f;
        let fmha = attention(b.f3);
        let tmha = attention(cfg.max_ctx_frames);
        let conv3 = conv_macs(b.f2, c1, c2);
        let deconv3 = deconv_macs(b.f3, c2, c1);
        let row = |name: &str, st: u64, dy: u64| MacRow {
            name: name.to_string(),
            static_per_frame: st,
            dynamic_per_frame: dy,
        };
        let mut rows = vec![
            row("Conv_1", conv_macs(b.f0, 1, c0), 0),
            row("Conv_2", conv_macs(b.f1, c0, c1), 0),
            row("Policy", (2 * c1 * POLICY_HIDDEN + POLICY_HIDDEN + POLICY_HIDDEN * 2 + 2) as u64, 0),
            row("Conv_3", conv3, dyn_pair(conv3)),
        ];
        if n_t > 0 {
            rows.push(row("T-MHA", n_t * tmha.0, n_t * tmha.1));
            rows.push(row("T-GRU", n_t * tgru.0, n_t * tgru.1));
        }
        if n_f > 0 {
            rows.push(row("F-MHA", n_f * fmha.0, n_f * fmha.1));
            rows.push(row("F-GRU", n_f * fgru.0, n_f * fgru.1));
        }
        rows.extend([
            row("Deconv_3", deconv3, dyn_pair(deconv3)),
            row("Deconv_2", deconv_macs(b.f2, 2 * c1, c0), 0),
            row("Deconv_1", deconv_macs(b.f1, 2 * c0, 1), 0),
            row("Mask", (b.f0 * b.f0 + b.f0) as u64, 0),
        ]);
        let time_attention = (n_t > 0).then(|| {
            let fixed = attention(0);
            let one = attention(1);
            TimeAttentionCost {
                blocks: n_t,
                fixed,
                per_ctx: (one.0 - fixed.0, one.1 - fixed.1),
            }
        });
        Ok(Accountant { rows, time_attention })
    }

    /// Exact MACs of frame `t` (0-based) given whether its dynamic parts run.
    fn frame(&self, cfg: &ModelConfig, t: usize, dynamic: bool) -> u64 {
        let mut total = 0;
        for r in &self.rows {
            if r.name == "T-MHA" {
                continue;
            }
            total += r.static_per_frame + if dynamic { r.dynamic_per_frame } else { 0 };
        }
        if let Some(ta) = self.time_attention {
            let ctx = (t + 1).min(cfg.max_ctx_frames) as u64;
            let st = ta.fixed.0 + ctx * ta.per_ctx.0;
            let dy = ta.fixed.1 + ctx * ta.per_ctx.1;
            total += ta.blocks * (st + if dynamic { dy } else { 0 });
        }
        total
    }
}

/// Steady-state per-module MAC table. Time attention is counted at its full
/// context; the first `max_ctx_frames - 1` frames of a stream attend over
/// fewer frames (see [`predict_utterance_macs`]).
pub fn count_macs(config: &ModelConfig) -> Result<MacReport> {
    Ok(MacReport {
        rows: Accountant::new(config)?.rows,
        frames_per_second: config.frames_per_second(),
    })
}

/// Exact MACs a forward pass executes for the given per-frame gates.
pub fn predict_utterance_macs(config: &ModelConfig, gates: &[f64], mode: ExecMode) -> Result<u64> {
    let acc = Accountant::new(config)?;
    Ok(gates
        .iter()
        .enumerate()
        .map(|(t, &g)| acc.frame(config, t, mode.runs_dynamic(g)))
        .sum())
}

/// Linear cost model: zero-activation MACs/s plus `ratio` of all deltas.
pub fn effective_macs(report: &MacReport, ratio: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DsnError::invalid(format!("activation ratio {ratio} outside [0, 1]")));
    }
    Ok(report.zero_activation_macs_s() + ratio * report.total_delta_macs_s())
}

/// One utterance in an activation report.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRow {
    pub utterance_id: String,
    pub key: Option<String>,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub key: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationReport {
    pub rows: Vec<ActivationRow>,
    /// Per key, ordered numerically when every key is a number.
    pub groups: Vec<GroupStats>,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-utterance activation ratios, grouped by optional key. Std is the
/// population std.
pub fn activation_report<'a>(
    entries: impl IntoIterator<Item = (&'a str, &'a GateVector, Option<&'a str>)>,
) -> Result<ActivationReport> {
    let rows: Vec<ActivationRow> = entries
        .into_iter()
        .map(|(id, g, key)| ActivationRow {
            utterance_id: id.to_string(),
            key: key.map(str::to_string),
            ratio: g.activation_ratio(),
        })
        .collect();
    ActivationReport::from_rows(rows)
}

impl ActivationReport {
    pub fn from_rows(rows: Vec<ActivationRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(DsnError::invalid("activation report needs at least one utterance"));
        }
        if let Some(r) = rows.iter().find(|r| !(0.0..=1.0).contains(&r.ratio)) {
            return Err(DsnError::invalid(format!(
                "utterance {} has ratio {} outside [0, 1]",
                r.utterance_id, r.ratio
            )));
        }
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let (mean, std) = mean_std(&ratios);
        let mut by_key: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            if let Some(k) = &r.key {
                by_key.entry(k.as_str()).or_default().push(r.ratio);
            }
        }
        let mut groups: Vec<GroupStats> = by_key
            .into_iter()
            .map(|(k, v)| {
                let (mean, std) = mean_std(&v);
                GroupStats {
                    key: k.to_string(),
                    count: v.len(),
                    mean,
                    std,
                }
            })
            .collect();
        let numeric: Option<Vec<f64>> = groups.iter().map(|g| g.key.parse::<f64>().ok()).collect();
        if let Some(nums) = numeric {
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.sort_by(|&a, &b| nums[a].total_cmp(&nums[b]));
            groups = order.into_iter().map(|i| groups[i].clone()).collect();
        }
        Ok(ActivationReport {
            rows,
            groups,
            mean,
            std,
        })
    }

    /// `utterance_id,key,ratio`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["utterance_id", "key", "ratio"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.utterance_id.as_str(),
                r.key.as_deref().unwrap_or(""),
                &format!("{:.6}", r.ratio),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// `key,count,mean,std`.
    pub fn groups_csv(&self) -> String {
        let mut s = String::from("key,count,mean,std\n");
        for g in &self.groups {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", g.key, g.count, g.mean, g.std);
        }
        s
    }
}

/// Gate source of a benchmark run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateSetting {
    AllZero,
    AllOne,
    Policy,
}

impl GateSetting {
    pub const ALL: [GateSetting; 3] = [GateSetting::AllZero, GateSetting::AllOne, GateSetting::Policy];

    pub fn label(self) -> &'static str {
        match self {
            GateSetting::AllZero => "0",
            GateSetting::AllOne => "1",
            GateSetting::Policy => "policy",
        }
    }
}

impl std::str::FromStr for GateSetting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "0" => Ok(GateSetting::AllZero),
            "1" => Ok(GateSetting::AllOne),
            "policy" => Ok(GateSetting::Policy),
            other => Err(format!("gate override must be 0, 1 or policy, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: ExecMode,
    pub gates: GateSetting,
    pub median_secs: f64,
    pub runs: Vec<f64>,
    pub macs: u64,
    pub activation_ratio: f64,
    pub audio_secs: f64,
}

impl BenchRow {
    /// Seconds of audio processed per second of wall clock.
    pub fn throughput(&self) -> f64 {
        self.audio_secs / self.median_secs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, mode: ExecMode, gates: GateSetting) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode && r.gates == gates)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,gates,median_secs,realtime_factor,macs,ratio\n");
        for r in &self.rows {
            let mode = match r.mode {
                ExecMode::Slim => "slim",
                ExecMode::MaskedDense => "masked",
            };
            let _ = writeln!(
                s,
                "{mode},{},{:.6},{:.3},{},{:.4}",
                r.gates.label(),
                r.median_secs,
                r.throughput(),
                r.macs,
                r.activation_ratio
            );
        }
        s
    }
}

pub const BENCH_RUNS: usize = 5;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time `runs` forward passes over seeded noise for every mode and gate
/// setting; reports the median. Runs on the calling thread.
pub fn bench(model: &DsnModel, seconds: f64, modes: &[ExecMode], runs: usize, seed: u64) -> Result<BenchReport> {
    let n = (seconds * model.config().sample_rate as f64).round() as usize;
    let mut rng = SeededRng::new(seed);
    let audio = AudioBuffer::new((0..n).map(|_| rng.uniform_in(-0.5, 0.5)).collect(), model.config().sample_rate)?;
    let frames = crate::signal::frame_count(n, model.config().fft_size, model.config().hop);
    let mut rows = Vec::new();
    for &mode in modes {
        for gates in GateSetting::ALL {
            let gv = match gates {
                GateSetting::AllZero => Some(GateVector::constant(frames, false)),
                GateSetting::AllOne => Some(GateVector::constant(frames, true)),
                GateSetting::Policy => None,
            };
            let mut times = Vec::with_capacity(runs.max(1));
            let mut last = None;
            for _ in 0..runs.max(1) {
                let start = Instant::now();
                let out = model.forward_utterance(&audio, mode, gv.as_ref())?;
                times.push(start.elapsed().as_secs_f64());
                last = Some(out);
            }
            let out = last.expect("at least one run");
            rows.push(BenchRow {
                mode,
                gates,
                median_secs: median(times.clone()),
                runs: times,
                macs: out.macs,
                activation_ratio: out.gates.activation_ratio(),
                audio_secs: seconds,
            });
        }
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::GateMode;

    #[test]
    fn reference_rows_are_consistent() {
        let r = count_macs(&ModelConfig::default()).unwrap();
        let sum = r.zero_activation_macs_s() + r.total_delta_macs_s();
        assert_eq!(sum, r.full_activation_macs_s());
        for row in &r.rows {
            let pct = 100.0 * row.dynamic_per_frame as f64 / (row.static_per_frame + row.dynamic_per_frame) as f64;
            assert_eq!(row.pct(), pct);
        }
        assert_eq!(r.row("Conv_3").unwrap().pct(), 50.0);
    }

    #[test]
    fn halving_hop_doubles_rates() {
        let base = count_macs(&ModelConfig::default()).unwrap();
        let fast = count_macs(&ModelConfig {
            hop: 128,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(fast.frames_per_second, 125.0);
        assert_eq!(fast.zero_activation_macs_s(), 2.0 * base.zero_activation_macs_s());
        for (a, b) in base.rows.iter().zip(&fast.rows) {
            assert_eq!(fast.delta_macs_s(b), 2.0 * base.delta_macs_s(a));
        }
    }

    #[test]
    fn no_dynamic_groups_means_no_deltas() {
        let r = count_macs(&ModelConfig {
            dynamic_groups: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(r.rows.iter().all(|row| row.dynamic_per_frame == 0));
    }

    #[test]
    fn effective_macs_endpoints() {
        let r = count_macs(&ModelConfig::default()).unwrap();
        assert_eq!(effective_macs(&r, 0.0).unwrap(), r.zero_activation_macs_s());
        assert_eq!(effective_macs(&r, 1.0).unwrap(), r.full_activation_macs_s());
        let mid = 0.5 * (r.zero_activation_macs_s() + r.full_activation_macs_s());
        assert_eq!(effective_macs(&r, 0.5).unwrap(), mid);
        assert!(effective_macs(&r, 1.1).is_err());
    }

    #[test]
    fn prediction_matches_runtime_counter() {
        let cfg = ModelConfig {
            fft_size: 64,
            hop: 32,
            channels: [4, 8, 8],
            max_ctx_frames: 3,
            layout: "FTT".into(),
            ..Default::default()
        };
        let model = DsnModel::seeded(cfg.clone()).unwrap();
        let mut rng = SeededRng::new(4);
        let audio = AudioBuffer::new((0..500).map(|_| rng.normal()).collect(), 16_000).unwrap();
        let frames = crate::signal::frame_count(500, 64, 32);
        let g = GateVector::bernoulli(frames, 0.5, &mut rng);
        for mode in [ExecMode::Slim, ExecMode::MaskedDense] {
            let out = model.forward_utterance(&audio, mode, Some(&g)).unwrap();
            assert_eq!(out.macs, predict_utterance_macs(&cfg, g.values(), mode).unwrap());
        }
    }

    #[test]
    fn activation_report_examples() {
        let a = GateVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0], GateMode::Hard).unwrap();
        let b = GateVector::new(vec![1.0, 1.0, 1.0, 1.0, 0.0], GateMode::Hard).unwrap();
        let rep = activation_report([("a", &a, Some("5")), ("b", &b, Some("-5"))]).unwrap();
        assert!((rep.mean - 0.5).abs() < 1e-15);
        assert_eq!(rep.groups.iter().map(|g| g.key.as_str()).collect::<Vec<_>>(), ["-5", "5"]);
        assert!(rep.to_csv().starts_with("utterance_id,key,ratio\na,5,0.200000\n"));
        let empty: Vec<(&str, &GateVector, Option<&str>)> = Vec::new();
        assert!(activation_report(empty).is_err());
    }
}
