//! Print the per-module MAC table of the reference configuration and the
//! effective cost at a few activation ratios.

use anyhow::Result;
use dsn::ledger::{count_macs, effective_macs};
use dsn::model::{DsnModel, ModelConfig};

fn main() -> Result<()> {
    let config = ModelConfig::default();
    let report = count_macs(&config)?;
    print!("{}", report.to_table());
    for ratio in [0.25, 0.5, 0.75] {
        println!("activation {ratio:.2}: {:.3} M MACs/s", effective_macs(&report, ratio)? / 1e6);
    }
    let model = DsnModel::seeded(config)?;
    println!("parameters: {}", model.param_count());
    Ok(())
}
