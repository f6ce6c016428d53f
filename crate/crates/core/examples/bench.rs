//! Wall-clock comparison of slim and masked-dense execution under all-off,
//! all-on and policy gates on the reference model.
//!
//! Usage: `cargo run --release --example bench [seconds]`

use anyhow::Result;
use dsn::blocks::ExecMode;
use dsn::ledger::{bench, GateSetting, BENCH_RUNS};
use dsn::model::{DsnModel, ModelConfig};

fn main() -> Result<()> {
    let seconds: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2.0);
    let model = DsnModel::seeded(ModelConfig::default())?;
    let report = bench(&model, seconds, &[ExecMode::Slim, ExecMode::MaskedDense], BENCH_RUNS, 1)?;
    print!("{}", report.to_csv());
    let zero = report.row(ExecMode::Slim, GateSetting::AllZero).unwrap();
    let one = report.row(ExecMode::Slim, GateSetting::AllOne).unwrap();
    println!("slim speed-up with all gates off: {:.2}x", zero.throughput() / one.throughput());
    Ok(())
}
