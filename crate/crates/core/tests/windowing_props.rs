mod common;

use common::{enumerate_starts, intra_fixture, ramp_series};
use phm_protocol::model::{Matrix, SplitTag};
use phm_protocol::partition::route_windows;
use phm_protocol::windowing::{
    admissible_starts, n_slices, slice_unit, tabularize, untabularize, WindowLabel, WindowSpec,
};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = (usize, WindowSpec)> {
    (
        0usize..=200,
        1usize..=20,
        1usize..=10,
        0usize..=5,
        0usize..=5,
        1usize..=3,
    )
        .prop_filter_map(
            "warm start must fit inside the first window",
            |(t, l, stride, rho, delta, pred)| {
                let spec = WindowSpec {
                    warm_start: rho,
                    offset: delta,
                    pred_len: pred,
                    ..WindowSpec::new(l, stride)
                };
                spec.validate().ok().map(|_| (t, spec))
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_form_matches_enumeration((t, spec) in spec_strategy()) {
        let expected = enumerate_starts(t, &spec);
        prop_assert_eq!(n_slices(t, &spec).unwrap(), expected.len());
        prop_assert_eq!(admissible_starts(t, &spec).unwrap(), expected);
    }
}

proptest! {
    #[test]
    fn tabularize_round_trip_is_bit_exact(rows in 1usize..12, cols in 1usize..5, seed in any::<u64>()) {
        let data: Vec<f64> = (0..rows * cols).map(|i| f64::from_bits(seed.rotate_left(i as u32) >> 2)).collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let flat = tabularize(&m);
        prop_assert_eq!(flat[..cols].to_vec(), m.row(0).to_vec());
        prop_assert!(untabularize(&flat, rows, cols).unwrap().bit_eq(&m));
    }

    #[test]
    fn labels_sit_at_the_supervision_index(len in 1usize..60, l in 1usize..8, stride in 1usize..5, delta in 0usize..3) {
        let spec = WindowSpec { offset: delta, ..WindowSpec::new(l, stride) };
        for w in slice_unit(&ramp_series("r", len), &spec, SplitTag::Train).unwrap() {
            prop_assert_eq!(w.j_sup as i64, w.k + l as i64 - 1 + delta as i64);
            prop_assert_eq!(&w.y, &WindowLabel::Scalar(100.0 + w.j_sup as f64));
            prop_assert_eq!(w.window.get(0, 0), w.k as f64);
        }
    }
}

#[test]
fn worked_example_starts_and_labels() {
    let spec = WindowSpec::new(4, 3);
    let windows = slice_unit(&ramp_series("r", 15), &spec, SplitTag::Train).unwrap();
    let ks: Vec<i64> = windows.iter().map(|w| w.k).collect();
    let ys: Vec<f64> = windows.iter().map(|w| w.y.scalar().unwrap()).collect();
    assert_eq!(ks, [1, 4, 7, 10]);
    assert_eq!(ys, [104.0, 107.0, 110.0, 113.0]);
}

#[test]
fn short_series_yield_no_windows() {
    assert_eq!(n_slices(4, &WindowSpec::new(4, 1)).unwrap(), 0);
    assert_eq!(n_slices(5, &WindowSpec::new(4, 1)).unwrap(), 1);
}

#[test]
fn intra_fixture_routes_by_supervision_index() {
    let (assignment, samples) = intra_fixture();
    let routed = route_windows(samples.clone(), &assignment).unwrap();
    let ks = |tag| routed[&tag].iter().map(|s| s.k).collect::<Vec<_>>();
    assert_eq!(ks(SplitTag::Train), (1..=8).collect::<Vec<_>>());
    assert_eq!(ks(SplitTag::Val), (9..=13).collect::<Vec<_>>());
    assert_eq!(ks(SplitTag::Test), (14..=17).collect::<Vec<_>>());

    // Enumeration: every window lands in exactly the split its j_sup names.
    for s in &samples {
        let expected = match s.j_sup {
            j if j <= 10 => SplitTag::Train,
            j if j <= 15 => SplitTag::Val,
            _ => SplitTag::Test,
        };
        let hits: Vec<_> = routed
            .iter()
            .filter(|(_, v)| v.iter().any(|r| r.k == s.k))
            .map(|(t, _)| *t)
            .collect();
        assert_eq!(hits, [expected]);
    }
}
