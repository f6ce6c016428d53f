//! Slim execution skips gated-off dynamic paths; masked-dense execution
//! computes them and multiplies by zero. Both give the same waveform.

use anyhow::Result;
use dsn::blocks::ExecMode;
use dsn::ledger::predict_utterance_macs;
use dsn::model::{DsnModel, ModelConfig};
use dsn::policy::GateVector;
use dsn::signal::frame_count;
use dsn::tensor::SeededRng;
use dsn::verify::{max_rel_diff, seeded_noise};

fn main() -> Result<()> {
    let config = ModelConfig::default();
    let model = DsnModel::seeded(config.clone())?;
    let x = seeded_noise(5, 16_000);
    let frames = frame_count(x.len(), config.fft_size, config.hop);
    let mut rng = SeededRng::new(9);

    for p in [0.0, 0.3, 0.7, 1.0] {
        let g = GateVector::bernoulli(frames, p, &mut rng);
        let slim = model.forward_utterance(&x, ExecMode::Slim, Some(&g))?;
        let dense = model.forward_utterance(&x, ExecMode::MaskedDense, Some(&g))?;
        println!(
            "ratio {:.2}: slim {:.1} M MACs (predicted {:.1} M), dense {:.1} M, rel diff {:.1e}",
            g.activation_ratio(),
            slim.macs as f64 / 1e6,
            predict_utterance_macs(&config, g.values(), ExecMode::Slim)? as f64 / 1e6,
            dense.macs as f64 / 1e6,
            max_rel_diff(&slim.audio.samples, &dense.audio.samples)
        );
    }
    Ok(())
}
