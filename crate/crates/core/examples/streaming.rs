//! Frame-by-frame streaming with arbitrary chunk sizes, checked against the
//! offline pass.

use anyhow::Result;
use dsn::blocks::ExecMode;
use dsn::model::{DsnModel, ModelConfig, StreamingEnhancer};
use dsn::verify::{max_abs_diff, seeded_noise};

fn main() -> Result<()> {
    let model = DsnModel::seeded(ModelConfig::default())?;
    let x = seeded_noise(11, 24_000);
    let offline = model.forward_utterance(&x, ExecMode::Slim, None)?;

    let mut stream = StreamingEnhancer::new(&model, ExecMode::Slim);
    let state_bytes = stream.state().byte_size();
    let mut y = Vec::new();
    // 10 ms chunks, as an audio callback would deliver them.
    for chunk in x.samples.chunks(160) {
        y.extend(stream.push(chunk)?);
    }
    let macs = stream.macs();
    let (tail, gates) = stream.finish();
    y.extend(tail);
    y.resize(x.len(), 0.0);

    println!("frames: {}", gates.len());
    println!("state: {state_bytes} bytes (constant)");
    println!("MACs: {:.1} M", macs as f64 / 1e6);
    println!("max |stream - offline|: {:.3e}", max_abs_diff(&y, &offline.audio.samples));
    Ok(())
}
