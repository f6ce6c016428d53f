//! Gate losses with a fixed target and with a quality-dependent target, plus
//! a finite-difference check of the policy gradients.

use anyhow::Result;
use dsn::policy::{gate_loss, gate_loss_mgt, map_ovrl_to_theta, GateVector, MetricScore};
use dsn::verify::policy_gradcheck;

fn main() -> Result<()> {
    let g = GateVector::from_bitstring("1101")?;
    println!("gates {} ratio {:.2}", g.to_bitstring(), g.activation_ratio());
    println!("fixed target 0.5: loss {:.4}", gate_loss(&g, 0.5)?);
    for m in [1.0, 2.5, 4.0, 4.9] {
        let m = MetricScore::new(m)?;
        println!(
            "OVRL {:.1}: target {:.4}, loss {:.4}",
            m.value(),
            map_ovrl_to_theta(m, 0.5)?,
            gate_loss_mgt(&g, m, 0.5)?
        );
    }
    for seed in [6, 7] {
        let r = policy_gradcheck(seed, 32, 65, 20)?;
        println!("gradcheck seed {seed}: {} params, max rel err {:.2e}", r.params, r.max_rel_err);
    }
    Ok(())
}
