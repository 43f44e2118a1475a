use phm_protocol::datasource::{
    construct_ah_rul, construct_ah_rul_cycles, generate_synthetic, read_csv, write_csv, AhRulSpec, CsvSchema,
    CycleProfile, EolRule, SignConvention, SyntheticSpec,
};
use phm_protocol::model::{Matrix, RawUnit};
use proptest::prelude::*;

fn spec(eol_rule: EolRule) -> AhRulSpec {
    AhRulSpec {
        q_nom: 2.0,
        current_channel: "current".into(),
        sign_convention: SignConvention::PositiveDischarge,
        eol_rule,
    }
}

fn cycle(current: f64, hours: f64, capacity: f64) -> CycleProfile {
    let steps = 10;
    CycleProfile {
        time: (0..=steps).map(|i| hours * i as f64 / steps as f64).collect(),
        current: vec![current; steps + 1],
        capacity: Some(capacity),
    }
}

proptest! {
    #[test]
    fn ah_rul_is_nonincreasing_and_zero_after_eol(
        profile in prop::collection::vec((-3.0f64..3.0, 0.1f64..2.0), 2..30),
        threshold in 0.5f64..1.0,
    ) {
        let cycles: Vec<CycleProfile> = profile
            .iter()
            .enumerate()
            .map(|(n, &(i, h))| cycle(i, h, 1.0 - 0.02 * n as f64))
            .collect();
        for rule in [EolRule::LastCycle, EolRule::Threshold(threshold)] {
            let Ok(rul) = construct_ah_rul_cycles(&cycles, &spec(rule)) else { continue };
            prop_assert!(rul.windows(2).all(|w| w[1] <= w[0]));
            let eol = match rule {
                EolRule::LastCycle => cycles.len() - 1,
                EolRule::Threshold(q) => cycles.iter().position(|c| c.capacity.unwrap() < q).unwrap_or(cycles.len() - 1),
            };
            prop_assert!(rul[eol..].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn constant_current_matches_hand_integration() {
    // 1.5 A for 0.8 h per cycle is 1.2 Ah, or 0.6 of the 2 Ah nominal.
    let cycles: Vec<CycleProfile> = (0..5).map(|_| cycle(1.5, 0.8, 1.0)).collect();
    let rul = construct_ah_rul_cycles(&cycles, &spec(EolRule::LastCycle)).unwrap();
    for (n, v) in rul.iter().enumerate() {
        let hand = (4 - n) as f64 * 1.5 * 0.8 / 2.0;
        assert!((v - hand).abs() <= 1e-12, "cycle {n}: {v} vs {hand}");
    }
}

#[test]
fn charge_current_is_ignored() {
    let mut c = cycle(1.0, 1.0, 1.0);
    c.current.iter_mut().skip(6).for_each(|i| *i = -4.0);
    let rul = construct_ah_rul_cycles(&[c.clone(), c], &spec(EolRule::LastCycle)).unwrap();
    // Discharge runs for 0.5 h, then a half step ramps down to zero.
    assert!((rul[0] - (0.5 + 0.05) / 2.0).abs() <= 1e-12);
}

#[test]
fn row_level_targets_follow_cycles() {
    let rows: Vec<Vec<f64>> = (0..3)
        .flat_map(|c| (0..3).map(move |i| vec![c as f64, i as f64 * 0.5, -2.0, 1.0 - 0.1 * c as f64]))
        .collect();
    let unit = RawUnit::new(
        "cell",
        Matrix::from_rows(&rows).unwrap(),
        vec![0.0; 9],
        ["cycle", "time", "current", "capacity"].map(String::from).to_vec(),
    )
    .unwrap();
    let s = AhRulSpec {
        sign_convention: SignConvention::NegativeDischarge,
        ..spec(EolRule::Threshold(0.85))
    };
    let rul = construct_ah_rul(&unit, &s).unwrap();
    // 2 A over 1 h is 2 Ah per cycle, one nominal capacity; capacity first drops below 0.85 at cycle 2.
    assert_eq!(rul, [2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn csv_round_trip_preserves_units() {
    let units = generate_synthetic(&SyntheticSpec {
        n_units: 3,
        noise_std: 0.3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &units).unwrap();
    let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back.len(), units.len());
    for (a, b) in units.iter().zip(&back) {
        assert_eq!(a.unit_id, b.unit_id);
        assert!(a.features.bit_eq(&b.features));
        assert_eq!(a.target, b.target);
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let s = SyntheticSpec {
        noise_std: 0.5,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&s).unwrap();
    let b = generate_synthetic(&s).unwrap();
    let c = generate_synthetic(&SyntheticSpec { seed: 4, ..s }).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.features.bit_eq(&y.features)));
    assert!(!a.iter().zip(&c).all(|(x, y)| x.features.bit_eq(&y.features)));
}
