//! Remaining discharge throughput targets for a battery cell.
//!
//! Run with `cargo run --example ah_rul`.

use phm_protocol::datasource::{construct_ah_rul_cycles, AhRulSpec, CycleProfile, EolRule, SignConvention};
use phm_protocol::Result;

fn main() -> Result<()> {
    // Six cycles, each discharging at 2 A for 0.5 h and charging for 0.5 h,
    // with capacity fading by 0.05 Ah per cycle.
    let cycles: Vec<CycleProfile> = (0..6)
        .map(|n| CycleProfile {
            time: vec![0.0, 0.5, 0.5, 1.0],
            current: vec![-2.0, -2.0, 1.5, 1.5],
            capacity: Some(1.0 - 0.05 * n as f64),
        })
        .collect();
    let spec = AhRulSpec {
        q_nom: 1.0,
        current_channel: "current".into(),
        sign_convention: SignConvention::NegativeDischarge,
        eol_rule: EolRule::Threshold(0.82),
    };
    let rul = construct_ah_rul_cycles(&cycles, &spec)?;
    println!("ah-RUL per cycle (threshold 0.82 Ah): {rul:?}");

    let last = AhRulSpec {
        eol_rule: EolRule::LastCycle,
        ..spec
    };
    println!(
        "ah-RUL per cycle (last cycle):        {:?}",
        construct_ah_rul_cycles(&cycles, &last)?
    );
    Ok(())
}
