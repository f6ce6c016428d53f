//! Upper bound for a compressed-domain mask: `|S|^c / |X|^c` clipped to
//! `[0, 1]`, computed from the clean and mixture spectra of a 0 dB mixture.

use anyhow::Result;
use dsn::signal::{apply_mask, si_sdr, AudioBuffer, StftEngine, DEFAULT_COMPRESSION, SAMPLE_RATE};
use dsn::tensor::SeededRng;

fn main() -> Result<()> {
    let n = 2 * SAMPLE_RATE as usize;
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
            env * (1..=5)
                .map(|h| (2.0 * std::f64::consts::PI * 180.0 * h as f64 * t).sin() / h as f64)
                .sum::<f64>()
        })
        .collect();
    let mut rng = SeededRng::new(4);
    let raw: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let gain = (clean.iter().map(|v| v * v).sum::<f64>() / raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let noise: Vec<f64> = raw.iter().map(|v| v * gain).collect();
    let mix: Vec<f64> = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();

    let stft = StftEngine::new(512, 256)?;
    let c = DEFAULT_COMPRESSION;
    let s = stft.stft_samples(&clean)?.magnitudes();
    let mix_spec = stft.stft_samples(&mix)?;
    let x = mix_spec.magnitudes();
    let mask: Vec<f64> = s
        .iter()
        .zip(&x)
        .map(|(s, x)| if *x > 0.0 { (s.powf(c) / x.powf(c)).min(1.0) } else { 0.0 })
        .collect();
    let est = stft.istft(&apply_mask(&mix_spec, &mask, c)?)?;
    let est = AudioBuffer::new(est.samples[..n].to_vec(), SAMPLE_RATE)?;

    let before = si_sdr(&mix, &clean)?;
    let after = si_sdr(&est.samples, &clean)?;
    println!("mixture SI-SDR {before:.2} dB, oracle mask {after:.2} dB, improvement {:.2} dB", after - before);
    Ok(())
}
