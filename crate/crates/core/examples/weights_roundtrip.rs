//! Save seeded weights, reload them and confirm identical output.

use anyhow::Result;
use dsn::blocks::ExecMode;
use dsn::model::{DsnModel, Init, ModelConfig};
use dsn::verify::seeded_noise;
use dsn::weights::WeightStore;

fn main() -> Result<()> {
    let config = ModelConfig { seed: 42, ..Default::default() };
    let model = DsnModel::seeded(config.clone())?;
    let dir = std::env::temp_dir().join("dsn_weights_example");
    std::fs::create_dir_all(&dir)?;
    let manifest = model.weights().save(dir.join("model"))?;
    println!("saved {} tensors, {} parameters to {}", model.weights().len(), model.param_count(), manifest.display());

    let reloaded = DsnModel::build(config, Init::Weights(WeightStore::load(&manifest)?))?;
    let x = seeded_noise(1, 8_000);
    let a = model.forward_utterance(&x, ExecMode::Slim, None)?;
    let b = reloaded.forward_utterance(&x, ExecMode::Slim, None)?;
    println!("identical output after reload: {}", a.audio == b.audio);
    Ok(())
}
