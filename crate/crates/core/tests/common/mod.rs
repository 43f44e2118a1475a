//! Oracles and fixtures shared by the integration tests and the acceptance
//! binary. Oracles here never call the routine they check.

#![allow(dead_code)]

use phm_protocol::model::{AlignedSeries, IntraBounds, Matrix, RawUnit, SplitAssignment, SplitTag, SupportMap};
use phm_protocol::runner::RunConfig;
use phm_protocol::windowing::{slice_unit, TabularSample, WindowSpec};

/// Admissible starts by scanning every candidate index.
pub fn enumerate_starts(t_prime: usize, spec: &WindowSpec) -> Vec<i64> {
    let first = 1 - spec.warm_start as i64;
    let l_req = (spec.seq_len + spec.offset + spec.pred_len) as i64;
    (first - 50..=t_prime as i64 + 50)
        .filter(|&k| k >= first)
        .filter(|&k| (k - first) % spec.stride as i64 == 0)
        .filter(|&k| k + l_req - 1 <= t_prime as i64)
        .collect()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn brute_auroc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &p) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        for (j, &n) in scores.iter().enumerate() {
            if truth[j] {
                continue;
            }
            pairs += 1.0;
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// A one-channel series with feature value t and target 100 + t at index t.
pub fn ramp_series(unit: &str, len: usize) -> AlignedSeries {
    let x = Matrix::column_vector((1..=len).map(|t| t as f64).collect());
    let y = (1..=len).map(|t| 100.0 + t as f64).collect();
    AlignedSeries::new(unit, x, y, SupportMap::identity(len)).unwrap()
}

/// One unit with T' = 20, tau_train = 10, tau_val = 15, windowed with L_seq = 3.
pub fn intra_fixture() -> (SplitAssignment, Vec<TabularSample>) {
    let bounds = IntraBounds {
        tau_train: 10,
        tau_val: 15,
        t_prime: 20,
        raw_train_limit: 10,
    };
    let assignment = SplitAssignment::IntraUnit([("u".to_string(), bounds)].into());
    let windows = slice_unit(&ramp_series("u", 20), &WindowSpec::new(3, 1), SplitTag::Train).unwrap();
    (assignment, windows.iter().map(TabularSample::from_window).collect())
}

/// Raw units with `len` steps, `width` channels and values drawn from `seed`.
pub fn noisy_units(n: usize, len: usize, width: usize, seed: u64) -> Vec<RawUnit> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|u| {
            let data = (0..len * width).map(|_| rng.random_range(-50.0..50.0)).collect();
            let target = (0..len).map(|t| (len - 1 - t) as f64).collect();
            RawUnit::new(
                format!("u{u}"),
                Matrix::new(len, width, data).unwrap(),
                target,
                vec!["a".into(); width],
            )
            .unwrap()
            .with_metadata("dataset_id", if u % 2 == 0 { "fd001" } else { "fd002" })
        })
        .collect()
}

/// Noiseless linear degradation with a linear baseline, in either split regime.
pub fn linear_config(intra: bool) -> RunConfig {
    let split = if intra {
        r#"{"mode": "intra", "boundaries": {"train_frac": 0.6, "val_frac": 0.2}}"#
    } else {
        r#"{"mode": "inter", "unit_fractions": {"train_frac": 0.5, "val_frac": 0.25}}"#
    };
    let text = format!(
        r#"{{
            "datasource": {{"kind": "synthetic", "n_units": 8, "t_min": 40, "t_max": 60, "shape": "linear", "noise_std": 0.0}},
            "transforms": [
                {{"kind": "minmax", "cache_point": true}},
                {{"kind": "minmax", "name": "target_scale", "apply_to": ["target"]}}
            ],
            "window": {{"L_seq": 5}},
            "split": {split},
            "model": {{"kind": "linear_ls"}},
            "evaluator": {{"metrics": ["mae", "rmse"], "descale": true}},
            "seed": 7
        }}"#
    );
    RunConfig::parse(text.as_bytes(), None, None).unwrap()
}
