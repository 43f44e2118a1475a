mod common;

use std::collections::BTreeMap;

use common::{intra_fixture, ramp_series};
use phm_protocol::model::{IntraBounds, SplitAssignment, SplitTag};
use phm_protocol::partition::{
    leakage_audit, route_windows, select_context, AuditRecord, ContextSelection, ContextSpec, FitAudit, LeakageKind,
};
use phm_protocol::windowing::{slice_unit, TabularSample, WindowSpec};
use proptest::prelude::*;

proptest! {
    #[test]
    fn intra_routing_is_a_partition(t in 5usize..80, a in 0.0f64..1.0, b in 0.0f64..1.0, l in 1usize..6, stride in 1usize..4) {
        let tau_train = ((a * t as f64) as usize).max(1);
        let tau_val = tau_train + (b * (t - tau_train) as f64) as usize;
        let bounds = IntraBounds { tau_train, tau_val, t_prime: t, raw_train_limit: tau_train };
        let assignment = SplitAssignment::IntraUnit([("u".to_string(), bounds)].into());
        let samples: Vec<TabularSample> = slice_unit(&ramp_series("u", t), &WindowSpec::new(l, stride), SplitTag::Train)
            .unwrap()
            .iter()
            .map(TabularSample::from_window)
            .collect();
        let routed = route_windows(samples.clone(), &assignment).unwrap();
        prop_assert_eq!(routed.values().map(Vec::len).sum::<usize>(), samples.len());
        for (tag, group) in &routed {
            for s in group {
                prop_assert_eq!(s.split, *tag);
                let (lo, hi) = match tag {
                    SplitTag::Train => (0, tau_train),
                    SplitTag::Val => (tau_train + 1, tau_val),
                    SplitTag::Test => (tau_val + 1, usize::MAX),
                };
                prop_assert!(s.j_sup >= lo && s.j_sup <= hi);
            }
        }
    }

    #[test]
    fn contexts_stay_inside_training_history(size in 1usize..6, seed in any::<u64>(), q in 0usize..17) {
        let (assignment, samples) = intra_fixture();
        let routed = route_windows(samples.clone(), &assignment).unwrap();
        let pool = &routed[&SplitTag::Train];
        let query = &samples[q];
        for selection in [ContextSelection::Nearest, ContextSelection::Random { seed }] {
            let spec = ContextSpec { size, selection, enforce_intra_boundary: true };
            let ctx = select_context(query, pool, &spec, &assignment).unwrap();
            prop_assert_eq!(ctx.len(), size);
            prop_assert!(ctx.iter().all(|m| m.j_sup <= 10 && m.k != query.k));
            prop_assert_eq!(select_context(query, pool, &spec, &assignment).unwrap(), ctx);
        }
    }
}

#[test]
fn non_train_context_members_are_refused() {
    let (assignment, samples) = intra_fixture();
    let spec = ContextSpec {
        size: 2,
        selection: ContextSelection::Nearest,
        enforce_intra_boundary: true,
    };
    let err = select_context(&samples[0], &samples, &spec, &assignment).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

fn fit(consumed: Vec<SplitTag>, hi: usize) -> FitAudit {
    FitAudit {
        stage_name: "minmax".into(),
        fitted_on: SplitTag::Train,
        consumed_splits: consumed,
        consumed_raw_hi: BTreeMap::from([("u".to_string(), hi)]),
    }
}

#[test]
fn audit_flags_each_kind_of_leak() {
    let (assignment, samples) = intra_fixture();
    let ids = route_windows(samples, &assignment)
        .unwrap()
        .into_iter()
        .map(|(t, v)| (t, v.into_iter().map(|s| (s.unit_id, s.k)).collect()))
        .collect();
    let clean = AuditRecord::new(&assignment, &[], ids);
    assert!(leakage_audit(&clean).is_empty());

    let kinds = |r: &AuditRecord| leakage_audit(r).into_iter().map(|v| v.kind).collect::<Vec<_>>();
    let mut r = clean.clone();
    r.fits.push(fit(vec![SplitTag::Train], 11));
    assert_eq!(kinds(&r), [LeakageKind::FitPastBoundary]);

    let mut r = clean.clone();
    r.fits.push(fit(vec![SplitTag::Train, SplitTag::Val], 10));
    assert_eq!(kinds(&r), [LeakageKind::NonTrainFit]);

    let mut r = clean.clone();
    r.samples.get_mut(&SplitTag::Test).unwrap().push(("u".into(), 1));
    assert_eq!(kinds(&r), [LeakageKind::SplitOverlap]);

    let inter = SplitAssignment::inter(&["a"], &[], &["b"]).unwrap();
    let mut r = AuditRecord::new(&inter, &[], BTreeMap::new());
    let mut f = fit(vec![SplitTag::Train], 5);
    f.consumed_raw_hi = BTreeMap::from([("b".to_string(), 5)]);
    r.fits.push(f);
    assert_eq!(kinds(&r), [LeakageKind::NonTrainFit]);
}
