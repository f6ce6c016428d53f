//! Group per-utterance activation ratios by an external key, here a
//! synthetic SNR label.

use anyhow::Result;
use dsn::ledger::activation_report;
use dsn::policy::GateVector;
use dsn::tensor::SeededRng;

fn main() -> Result<()> {
    let mut rng = SeededRng::new(2);
    let utterances: Vec<(String, GateVector, String)> = (0..12)
        .map(|i| {
            let snr = [0, 5, 10, 15][i % 4];
            // Noisier input, more frames gated on.
            let p = 0.8 - 0.04 * snr as f64;
            (format!("utt{i:02}"), GateVector::bernoulli(200, p, &mut rng), snr.to_string())
        })
        .collect();
    let report = activation_report(
        utterances
            .iter()
            .map(|(id, g, key)| (id.as_str(), g, Some(key.as_str()))),
    )?;
    print!("{}", report.groups_csv());
    println!("overall mean {:.3} std {:.3}", report.mean, report.std);
    Ok(())
}
