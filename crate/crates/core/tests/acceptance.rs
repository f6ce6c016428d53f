//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its own line and the timing criterion has the machine to itself.
//!
//! `cargo test -p dsn --test acceptance`

use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Result};
use dsn::blocks::ExecMode;
use dsn::ledger::{bench, count_macs, effective_macs, predict_utterance_macs, GateSetting};
use dsn::model::{DsnModel, Init, ModelConfig, StreamingEnhancer};
use dsn::policy::{gate_loss, gate_loss_mgt, map_ovrl_to_theta, GateMode, GateVector, GatingLossConfig, MetricScore};
use dsn::signal::{apply_mask, frame_count, si_sdr, AudioBuffer, StftEngine, SI_SDR_CAP_DB};
use dsn::tensor::{SeededRng, Tensor};
use dsn::verify::{self, max_abs_diff, seeded_noise};

const SR: usize = 16_000;

type Criterion = (&'static str, fn() -> Result<String>);

fn reference() -> ModelConfig {
    ModelConfig::default()
}

fn slimming_equivalence() -> Result<String> {
    let seeds: Vec<u64> = (100..120).collect();
    let start = Instant::now();
    let (outcome, worst) = verify::slimming_equivalence(&reference(), &seeds, 1.0)?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(outcome.passed, "{outcome}");
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!("20 models, max rel err {worst:.2e} (tol 1e-5), {secs:.1} s"))
}

fn gate_identities() -> Result<String> {
    let config = reference();
    let model = DsnModel::seeded(config.clone())?;
    let mut store = model.weights().clone();
    let mut rng = SeededRng::new(77);
    let names: Vec<String> = store
        .names()
        .filter(|n| model.is_dynamic_param(n))
        .map(str::to_string)
        .collect();
    let mut randomized = 0;
    for name in &names {
        let t = store.get_mut(name).expect("listed name");
        for v in t.data_mut() {
            *v = rng.uniform_in(-2.0, 2.0);
        }
        randomized += t.len();
    }
    let scrambled = DsnModel::build(config.clone(), Init::Weights(store))?;

    let x = seeded_noise(3, SR);
    let frames = frame_count(x.len(), config.fft_size, config.hop);
    let off = GateVector::constant(frames, false);
    let on = GateVector::constant(frames, true);
    for mode in [ExecMode::Slim, ExecMode::MaskedDense] {
        let a = model.forward_utterance(&x, mode, Some(&off))?;
        let b = scrambled.forward_utterance(&x, mode, Some(&off))?;
        ensure!(a.audio == b.audio, "{mode:?}: g=0 output moved with dynamic weights");
    }
    let a = model.forward_utterance(&x, ExecMode::Slim, Some(&on))?;
    let b = scrambled.forward_utterance(&x, ExecMode::Slim, Some(&on))?;
    ensure!(a.audio != b.audio, "dynamic weights had no effect at g=1");
    for m in [&model, &scrambled] {
        let slim = m.forward_utterance(&x, ExecMode::Slim, Some(&on))?;
        let dense = m.forward_utterance(&x, ExecMode::MaskedDense, Some(&on))?;
        ensure!(slim.audio == dense.audio, "g=1 slim differs from masked dense");
    }
    Ok(format!(
        "{} dynamic tensors ({randomized} values) randomized; g=0 invariant, g=1 slim == dense exactly",
        names.len()
    ))
}

fn causality() -> Result<String> {
    let config = reference();
    let model = DsnModel::build(config.clone(), Init::Seed(12))?;
    let x = seeded_noise(13, SR);
    let base = model.forward_utterance(&x, ExecMode::Slim, None)?;
    let mut rng = SeededRng::new(14);
    let cuts = [600, 1000, 4_321, 8_000, 12_345, SR - 300];
    for &n in &cuts {
        let mut y = x.samples.clone();
        y[n..].iter_mut().for_each(|v| *v = rng.uniform_in(-1.0, 1.0));
        let out = model.forward_utterance(&AudioBuffer::new(y, x.sample_rate)?, ExecMode::Slim, None)?;
        let safe = n - (config.fft_size - 1);
        ensure!(
            out.audio.samples[..safe] == base.audio.samples[..safe],
            "perturbing from {n} changed output before {safe}"
        );
    }
    let outcome = verify::causality(&config, 15, 1.0)?;
    ensure!(outcome.passed, "{outcome}");
    Ok(format!("{} cut points plus built-in check, exact", cuts.len() + 3))
}

fn streaming() -> Result<String> {
    let config = reference();
    let (outcome, diff) = verify::streaming_vs_offline(&config, 21, 2.0)?;
    ensure!(outcome.passed, "{outcome}");

    let model = DsnModel::build(config, Init::Seed(22))?;
    let x = seeded_noise(23, 2 * SR);
    let offline = model.forward_utterance(&x, ExecMode::Slim, None)?;
    let mut s = StreamingEnhancer::new(&model, ExecMode::Slim);
    let mut y = Vec::new();
    for chunk in x.samples.chunks(123) {
        y.extend(s.push(chunk)?);
    }
    let (tail, gates) = s.finish();
    y.extend(tail);
    y.resize(x.len(), 0.0);
    let chunked = max_abs_diff(&y, &offline.audio.samples);
    ensure!(chunked <= 1e-9, "chunked streaming diff {chunked:e}");
    ensure!(gates == offline.gates.values(), "streaming gates differ");
    Ok(format!("2 s: window-fed {diff:.1e}, 123-sample chunks {chunked:.1e} (tol 1e-9)"))
}

fn gating_losses() -> Result<String> {
    let c = |n: usize, v: f64| GateVector::new(vec![v; n], GateMode::Soft);
    let m = MetricScore::new;
    let mut checked = 0;
    let mut eq = |got: f64, want: f64, what: &str| -> Result<()> {
        checked += 1;
        ensure!(got == want, "{what}: got {got:e}, want {want:e}");
        Ok(())
    };
    eq(gate_loss(&GateVector::constant(8, false), 0.5)?, 0.0, "g=0, theta=0.5")?;
    eq(gate_loss(&GateVector::constant(8, true), 0.5)?, 0.5, "g=1, theta=0.5")?;
    let g = GateVector::from_bitstring("11100")?;
    eq(gate_loss(&g, 0.5)?, 0.6 - 0.5, "mean 0.6, theta=0.5")?;
    eq(map_ovrl_to_theta(m(5.0)?, 0.5)?, 0.0, "m=5")?;
    eq(map_ovrl_to_theta(m(1.0)?, 0.5)?, 0.5, "m=1, lambda=0.5")?;
    eq(map_ovrl_to_theta(m(3.0)?, 1.0)?, 0.5, "m=3, lambda=1")?;
    eq(gate_loss_mgt(&c(4, 0.5)?, m(1.0)?, 0.5)?, 0.0, "g=0.5, m=1")?;
    eq(gate_loss_mgt(&c(4, 0.9)?, m(5.0)?, 0.5)?, 0.9, "g=0.9, m=5")?;
    eq(gate_loss_mgt(&c(4, 0.6)?, m(3.0)?, 0.5)?, 0.6 - 0.25, "g=0.6, m=3, lambda=0.5")?;
    let cfg = GatingLossConfig::metric_guided(0.5)?;
    eq(cfg.loss(&c(4, 0.6)?, Some(m(3.0)?))?, 0.6 - 0.25, "config dispatch")?;
    Ok(format!("{checked} examples exact"))
}

fn policy_gradients() -> Result<String> {
    let config = reference();
    let bins = config.bins();
    let mut worst = 0.0f64;
    let mut params = 0;
    for seed in 0..100 {
        let r = verify::policy_gradcheck(seed, config.channels[1], bins.f2, 20)?;
        ensure!(r.loss > 0.0, "seed {seed}: hinge inactive");
        worst = worst.max(r.max_rel_err);
        params = r.params;
    }
    ensure!(worst <= verify::GRAD_REL_TOL, "max rel err {worst:e}");
    Ok(format!("100 seeds x {params} params, max rel err {worst:.2e} (tol 1e-6)"))
}

fn mac_ledger() -> Result<String> {
    let report = count_macs(&reference())?;
    // (module, reduction %, delta M MACs/s)
    let table = [
        ("Conv_3", 50.0, 11.48),
        ("Deconv_3", 50.0, 11.43),
        ("T-MHA", 63.0, 28.84),
        ("T-GRU", 44.0, 9.02),
        ("F-MHA", 65.0, 25.17),
        ("F-GRU", 59.0, 24.47),
    ];
    let fps = report.frames_per_second;
    let mut parts = Vec::new();
    for (name, pct, delta) in table {
        let row = report.row(name).ok_or_else(|| anyhow::anyhow!("no {name} row"))?;
        let got_pct = row.pct();
        let got_delta = row.dynamic_per_frame as f64 * fps / 1e6;
        ensure!((got_pct - pct).abs() <= 8.0, "{name}: {got_pct:.1}% vs {pct}%");
        ensure!(
            (got_delta - delta).abs() <= 0.2 * delta,
            "{name}: delta {got_delta:.2} M vs {delta} M"
        );
        parts.push(format!("{name} {got_pct:.1}%/{got_delta:.2}M"));
    }
    Ok(format!(
        "{}; anchors (non-binding): zero {:.1} M vs 141 M, 50% {:.1} M vs 221 M, full {:.1} M vs 300 M",
        parts.join(", "),
        report.zero_activation_macs_s() / 1e6,
        effective_macs(&report, 0.5)? / 1e6,
        report.full_activation_macs_s() / 1e6
    ))
}

fn counter_consistency() -> Result<String> {
    let config = reference();
    let model = DsnModel::build(config.clone(), Init::Seed(31))?;
    let x = seeded_noise(32, SR + 777);
    let frames = frame_count(x.len(), config.fft_size, config.hop);
    let mut rng = SeededRng::new(33);
    let gates = [
        ("all-0", GateVector::constant(frames, false)),
        ("all-1", GateVector::constant(frames, true)),
        ("random", GateVector::bernoulli(frames, 0.5, &mut rng)),
    ];
    let mut parts = Vec::new();
    for (label, g) in &gates {
        for mode in [ExecMode::Slim, ExecMode::MaskedDense] {
            let run = model.forward_utterance(&x, mode, Some(g))?;
            let predicted = predict_utterance_macs(&config, g.values(), mode)?;
            ensure!(run.macs == predicted, "{label} {mode:?}: counted {} vs predicted {predicted}", run.macs);
        }
        parts.push(format!("{label} {}", predict_utterance_macs(&config, g.values(), ExecMode::Slim)?));
    }
    let policy = model.forward_utterance(&x, ExecMode::Slim, None)?;
    ensure!(policy.macs == predict_utterance_macs(&config, policy.gates.values(), ExecMode::Slim)?);
    Ok(format!("exact in both modes ({})", parts.join(", ")))
}

fn throughput() -> Result<String> {
    let model = DsnModel::seeded(reference())?;
    let report = bench(&model, 1.0, &[ExecMode::Slim], 5, 41)?;
    let zero = report.row(ExecMode::Slim, GateSetting::AllZero).expect("g=0 row");
    let one = report.row(ExecMode::Slim, GateSetting::AllOne).expect("g=1 row");
    let ratio = zero.throughput() / one.throughput();
    ensure!(ratio >= 1.25, "throughput ratio {ratio:.3} < 1.25");
    Ok(format!(
        "median of 5: g=0 {:.1} ms, g=1 {:.1} ms, ratio {ratio:.2}x (min 1.25x)",
        zero.median_secs * 1e3,
        one.median_secs * 1e3
    ))
}

fn parameter_count() -> Result<String> {
    let n = DsnModel::seeded(reference())?.param_count();
    ensure!((105_000..=175_000).contains(&n), "{n} parameters");
    Ok(format!("{n} parameters ({:+.1}% vs 0.14 M)", (n as f64 / 140_000.0 - 1.0) * 100.0))
}

fn signal_identities() -> Result<String> {
    let config = reference();
    let engine = StftEngine::new(config.fft_size, config.hop)?;
    let x = seeded_noise(51, SR);
    let n = x.len();
    let y = engine.istft(&engine.stft(&x)?)?;
    let rt = max_abs_diff(&y.samples[512..n - 512], &x.samples[512..n - 512]);
    ensure!(rt <= 1e-10, "round trip {rt:e}");

    let model = DsnModel::seeded(config.clone())?;
    let mut store = model.weights().clone();
    let w = store.get_mut("mask.weight").expect("mask weight");
    *w = Tensor::zeros(w.shape());
    let b = store.get_mut("mask.bias").expect("mask bias");
    *b = Tensor::filled(b.shape(), 1000.0);
    let open = DsnModel::build(config, Init::Weights(store))?;
    let out = open.forward_utterance(&x, ExecMode::Slim, None)?;
    ensure!(out.mask.data().iter().all(|&m| m == 1.0), "mask not saturated at 1");
    let id = max_abs_diff(&out.audio.samples[512..n - 512], &x.samples[512..n - 512]);
    ensure!(id <= 1e-10, "mask=1 pipeline error {id:e}");

    let s = &x.samples;
    let e = seeded_noise(52, n).samples;
    let base = si_sdr(&e, s)?;
    for k in [2.0, 0.5, 4.0, -8.0] {
        let scaled: Vec<f64> = e.iter().map(|v| v * k).collect();
        let got = si_sdr(&scaled, s)?;
        ensure!(got == base, "scale {k}: {got} vs {base}");
    }
    let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
    ensure!(si_sdr(&doubled, s)? == SI_SDR_CAP_DB);
    Ok(format!("round trip {rt:.1e}, mask=1 pipeline {id:.1e}, SI-SDR scale invariance exact"))
}

fn oracle_mask() -> Result<String> {
    let n = 2 * SR;
    let tau = 2.0 * std::f64::consts::PI;
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let env = 0.5 + 0.5 * (tau * 4.0 * t).sin();
            env * (1..=6).map(|h| (tau * 150.0 * h as f64 * t).sin() / h as f64).sum::<f64>()
        })
        .collect();
    let mut rng = SeededRng::new(61);
    let raw: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let energy = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let gain = (energy(&clean) / energy(&raw)).sqrt();
    let mix: Vec<f64> = clean.iter().zip(&raw).map(|(s, v)| s + gain * v).collect();
    let snr = 10.0 * (energy(&clean) / (gain * gain * energy(&raw))).log10();
    ensure!(snr.abs() < 1e-9, "mixture SNR {snr}");

    let config = reference();
    let c = config.compression;
    let engine = StftEngine::new(config.fft_size, config.hop)?;
    let s = engine.stft_samples(&clean)?.magnitudes();
    let spec = engine.stft_samples(&mix)?;
    let mask: Vec<f64> = s
        .iter()
        .zip(spec.magnitudes())
        .map(|(s, x)| if x > 0.0 { (s.powf(c) / x.powf(c)).min(1.0) } else { 0.0 })
        .collect();
    let mut est = engine.istft(&apply_mask(&spec, &mask, c)?)?.samples;
    est.resize(n, 0.0);
    let before = si_sdr(&mix, &clean)?;
    let after = si_sdr(&est, &clean)?;
    ensure!(after - before >= 5.0, "improvement {:.2} dB", after - before);
    Ok(format!("0 dB mixture: {before:.2} -> {after:.2} dB (+{:.2} dB, min 5)", after - before))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("slimming equivalence", slimming_equivalence),
        ("zero/full gate identities", gate_identities),
        ("causality", causality),
        ("streaming equals offline", streaming),
        ("gating loss examples", gating_losses),
        ("policy gradients", policy_gradients),
        ("MAC ledger", mac_ledger),
        ("MAC counter consistency", counter_consistency),
        ("slim throughput", throughput),
        ("parameter count", parameter_count),
        ("signal identities", signal_identities),
        ("oracle mask", oracle_mask),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {e:#} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

