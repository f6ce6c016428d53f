//! Enhance one WAV file with seeded weights.
//!
//! `cargo run --example enhance_file -- in.wav out.wav`. Without arguments a
//! noisy tone is synthesized and the result written to the temp directory.

use anyhow::{Context, Result};
use dsn::blocks::ExecMode;
use dsn::model::{DsnModel, ModelConfig};
use dsn::signal::{read_wav, write_wav, AudioBuffer, SAMPLE_RATE};
use dsn::tensor::SeededRng;

fn noisy_tone(seconds: f64) -> Result<AudioBuffer> {
    let mut rng = SeededRng::new(3);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + 0.1 * rng.normal()
        })
        .collect();
    Ok(AudioBuffer::new(x, SAMPLE_RATE)?)
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let input = match args.first() {
        Some(p) => read_wav(p).with_context(|| format!("reading {p}"))?,
        None => noisy_tone(2.0)?,
    };
    let output = args
        .get(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dsn_enhanced.wav"));

    let model = DsnModel::seeded(ModelConfig::default())?;
    let out = model.forward_utterance(&input, ExecMode::Slim, None)?;
    write_wav(&output, &out.audio)?;
    println!(
        "{:.2} s in, {} frames, activation ratio {:.3}, {:.1} M MACs -> {}",
        input.duration_secs(),
        out.gates.len(),
        out.gates.activation_ratio(),
        out.macs as f64 / 1e6,
        output.display()
    );
    Ok(())
}
