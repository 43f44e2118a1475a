//! A complete run from a JSON config to a run directory.
//!
//! Run with `cargo run --example end_to_end`.

use phm_protocol::runner::{execute_run, write_artifacts, RunConfig};
use phm_protocol::Result;

const CONFIG: &str = r#"{
    "datasource": {"kind": "synthetic", "n_units": 6, "t_min": 40, "t_max": 60, "shape": "linear"},
    "transforms": [
        {"kind": "minmax"},
        {"kind": "minmax", "name": "target_scale", "apply_to": ["target"]}
    ],
    "window": {"L_seq": 5},
    "split": {"mode": "intra", "boundaries": {"train_frac": 0.6, "val_frac": 0.2}},
    "model": {"kind": "linear_ls"},
    "evaluator": {"metrics": ["mae", "rmse", "phm_score"], "descale": true, "aggregation": "per_unit"},
    "seed": 3
}"#;

fn main() -> Result<()> {
    let config = RunConfig::parse(CONFIG.as_bytes(), None, None)?;
    let outcome = execute_run(&config, None)?;
    println!("config digest  {}", outcome.manifest.config_digest);
    println!("samples        {:?}", outcome.manifest.samples);
    println!("test metrics   {:?}", outcome.test.metrics);
    println!("in RUL units   {:?}", outcome.test.metrics_denormalized);
    println!(
        "test target reads before evaluation: {}",
        outcome.manifest.test_target_reads_before_evaluation
    );

    let dir = std::env::temp_dir().join(format!("phm-run-example-{}", std::process::id()));
    write_artifacts(&outcome, &dir)?;
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| phm_protocol::Error::Replay(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    files.sort();
    println!("run directory {}: {files:?}", dir.display());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
