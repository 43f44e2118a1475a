//! Fitted states depend on training data only.
//!
//! Perturbing the test unit leaves every fingerprint unchanged, and asking
//! a stage to fit on test data is refused outright.
//!
//! Run with `cargo run --example leakage_guard`.

use phm_protocol::datasource::{generate_synthetic, SyntheticSpec};
use phm_protocol::model::{SplitAssignment, SplitContainer, SplitTag, FEATURES_KEY};
use phm_protocol::transforms::{fit_stage, run_pipeline, FitData, StageKind, StageSpec};
use phm_protocol::Result;

fn main() -> Result<()> {
    let mut units = generate_synthetic(&SyntheticSpec {
        n_units: 3,
        noise_std: 0.1,
        ..SyntheticSpec::default()
    })?;
    let assignment = SplitAssignment::inter(&["unit_000", "unit_001"], &[], &["unit_002"])?;
    let stages = vec![StageSpec::new(StageKind::Standard, &[FEATURES_KEY])];

    let before = run_pipeline(&SplitContainer::from_raw(&units, assignment.clone())?, &stages)?;
    units[2].features.set(0, 0, 1e9);
    let after = run_pipeline(&SplitContainer::from_raw(&units, assignment.clone())?, &stages)?;
    println!("fingerprint before: {}", before.states[0].fingerprint_hex());
    println!("fingerprint after:  {}", after.states[0].fingerprint_hex());
    assert_eq!(before.states[0].fingerprint, after.states[0].fingerprint);

    let container = SplitContainer::from_raw(&units, assignment)?;
    let test_rows = FitData::from_container(&container, SplitTag::Test, FEATURES_KEY)?;
    match fit_stage(&stages[0], &test_rows) {
        Err(e) => println!("fit on test data refused: {e} (exit code {})", e.exit_code()),
        Ok(_) => unreachable!("a test fit must never succeed"),
    }
    Ok(())
}
