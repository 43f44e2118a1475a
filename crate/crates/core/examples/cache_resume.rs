//! Runs that share a cache directory skip work already done.
//!
//! The second run hits the fully preprocessed entry. After that entry is
//! removed, a third run resumes from the cache-point boundary and executes
//! only the stages downstream of it.
//!
//! Run with `cargo run --example cache_resume`.

use phm_protocol::cache::CacheStore;
use phm_protocol::runner::{execute_run, RunConfig};
use phm_protocol::Result;

const CONFIG: &str = r#"{
    "datasource": {"kind": "synthetic", "n_units": 5, "noise_std": 0.05},
    "transforms": [
        {"kind": "windowed_aggregation", "rule": "mean", "window": 2, "stride": 1, "cache_point": true},
        {"kind": "standard"}
    ],
    "window": {"L_seq": 4},
    "split": {"mode": "inter", "unit_fractions": {"train_frac": 0.6, "val_frac": 0.2}},
    "model": {"kind": "linear_ls"},
    "seed": 1
}"#;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("phm-cache-example-{}", std::process::id()));
    let store = CacheStore::new(&dir);
    let config = RunConfig::parse(CONFIG.as_bytes(), None, None)?;

    let cold = execute_run(&config, Some(&store))?;
    let warm = execute_run(&config, Some(&store))?;
    std::fs::remove_dir_all(dir.join("preprocessed")).ok();
    let resumed = execute_run(&config, Some(&store))?;
    let uncached = execute_run(&config, None)?;

    for (name, o) in [
        ("cold", &cold),
        ("warm", &warm),
        ("resumed", &resumed),
        ("no cache", &uncached),
    ] {
        println!(
            "{name:>8}: hit {:?}, stage executions {:?}, metrics digest {}",
            o.manifest.cache.hit_tier,
            o.manifest.stage_executions,
            &o.manifest.metrics_digest[..16]
        );
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
