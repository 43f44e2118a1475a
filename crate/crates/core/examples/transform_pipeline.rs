//! A grid-changing transform followed by a train-only scaler.
//!
//! The windowed mean shrinks 15 raw steps to 4 feature steps; each keeps the
//! raw span it summarizes, and the target is realigned with the `last` rule.
//!
//! Run with `cargo run --example transform_pipeline`.

use phm_protocol::model::{Matrix, RawUnit, SplitAssignment, SplitContainer, SplitTag, FEATURES_KEY, TARGET_KEY};
use phm_protocol::transforms::{run_pipeline, AggregationRule, AlignmentRule, StageKind, StageSpec};
use phm_protocol::Result;

fn unit(id: &str, offset: f64) -> Result<RawUnit> {
    let x: Vec<f64> = (1..=15).map(|t| offset + t as f64).collect();
    let y: Vec<f64> = (1..=15).map(|t| (15 - t) as f64).collect();
    RawUnit::new(id, Matrix::column_vector(x), y, vec!["s0".into()])
}

fn main() -> Result<()> {
    let units = vec![unit("a", 0.0)?, unit("b", 100.0)?];
    let container = SplitContainer::from_raw(&units, SplitAssignment::inter(&["a"], &[], &["b"])?)?;
    let stages = vec![
        StageSpec::new(
            StageKind::WindowedAggregation {
                rule: AggregationRule::Mean,
                window: 4,
                stride: 3,
            },
            &[FEATURES_KEY],
        )
        .align(AlignmentRule::Last),
        StageSpec::new(StageKind::MinMax, &[FEATURES_KEY]),
    ];
    let run = run_pipeline(&container, &stages)?;

    let frame = &run.container.split(SplitTag::Train)[0];
    let features = frame.array(FEATURES_KEY)?;
    println!("supports: {:?}", features.support.entries());
    println!("features: {:?}", features.values.column(0));
    println!("target:   {:?}", frame.array(TARGET_KEY)?.values.column(0));

    let test = &run.container.split(SplitTag::Test)[0];
    println!(
        "test features scaled with train min/max: {:?}",
        test.array(FEATURES_KEY)?.values.column(0)
    );
    for record in &run.fit_log {
        println!(
            "stage `{}` fitted on {} reading {:?}, fingerprint {}",
            record.stage_name,
            record.fitted_on,
            record.consumed_splits,
            &record.state_fingerprint[..16]
        );
    }
    Ok(())
}
