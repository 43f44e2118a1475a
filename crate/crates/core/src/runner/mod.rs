//! End-to-end orchestration: load, split, transform (through the cache),
//! window, route, fit, predict, evaluate, and persist a reproducible run.

mod config;

use std::cell::Cell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::{DatasourceConfig, EvaluatorConfig, RunConfig, SourceConfig, SplitConfig};

use crate::cache::{
    canonical_bytes, deserialize_checkpoint, lookup, serialize_checkpoint, CacheKeys, CacheStore, CODE_FINGERPRINT,
};
use crate::datasource::{construct_ah_rul, generate_synthetic, load_csv};
use crate::error::{Error, Result};
use crate::evaluator::{descale_predictions, evaluate, Metric, MetricReport, Prediction};
use crate::model::{validate_container, RawUnit, SplitAssignment, SplitContainer, SplitTag};
use crate::models::fit_baseline;
use crate::partition::{leakage_audit, resolve_intra_assignment, route_windows, AuditRecord};
use crate::transforms::{invert_target, resume_pipeline, PipelineCheckpoint, PipelineRun};
use crate::windowing::{slice_unit, TabularSample, WindowLabel};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CACHE_ENV: &str = "PHM_CACHE_DIR";

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsultedKey {
    pub tier: String,
    pub key: String,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CacheRecord {
    pub enabled: bool,
    pub consulted: Vec<ConsultedKey>,
    pub hit_tier: Option<String>,
    /// First pipeline stage executed in this run.
    pub resume_from: usize,
    pub stored: Vec<String>,
    pub quarantined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub code_fingerprint: String,
    pub seed: u64,
    pub tool_version: String,
    pub metrics_digest: String,
    pub cache: CacheRecord,
    /// Executions per pipeline stage in this run.
    pub stage_executions: Vec<usize>,
    /// Routed sample counts per split.
    pub samples: BTreeMap<SplitTag, usize>,
    /// Windows dropped because their label is undefined (NaN).
    pub unlabeled_windows: usize,
    /// Reads of test targets before the final evaluation; always 0.
    pub test_target_reads_before_evaluation: usize,
    pub notes: Vec<String>,
    pub audit: AuditRecord,
    /// Informative only; excluded from every digest.
    pub started_at_unix: f64,
    pub finished_at_unix: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub test: MetricReport,
    pub val: Option<MetricReport>,
    /// Compact JSON of {"test": ..., "val": ...}; its SHA-256 is the metrics digest.
    pub metrics_json: String,
    pub manifest: RunManifest,
    pub predictions: BTreeMap<SplitTag, Vec<Prediction>>,
}

/// Test targets held back from everything but the final evaluation. Every
/// read is counted, and reads before `unseal` are recorded separately.
struct SealedTargets {
    values: Vec<f64>,
    open: Cell<bool>,
    premature_reads: Cell<usize>,
}

impl SealedTargets {
    fn seal(samples: &mut [TabularSample]) -> Self {
        let values = samples
            .iter_mut()
            .map(|s| {
                let y = s.y.scalar().unwrap_or(f64::NAN);
                s.y = WindowLabel::Scalar(f64::NAN);
                y
            })
            .collect();
        Self {
            values,
            open: Cell::new(false),
            premature_reads: Cell::new(0),
        }
    }

    fn read(&self, i: usize) -> f64 {
        if !self.open.get() {
            self.premature_reads.set(self.premature_reads.get() + 1);
        }
        self.values[i]
    }

    fn unseal(&self) {
        self.open.set(true);
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or_default()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads the configured units, with ah-RUL targets when requested.
pub fn load_units(config: &RunConfig) -> Result<Vec<RawUnit>> {
    let ds = &config.datasource;
    let mut units = match &ds.source {
        SourceConfig::Synthetic(spec) => generate_synthetic(spec)?,
        SourceConfig::Csv { path, schema } => load_csv(path, schema)?,
    };
    if let Some(spec) = &ds.ah_rul {
        for unit in &mut units {
            unit.target = construct_ah_rul(unit, spec)?;
        }
    }
    Ok(units)
}

/// Resolves the split assignment over loaded units and keeps the units it uses.
pub fn build_assignment(config: &RunConfig, units: Vec<RawUnit>) -> Result<(SplitAssignment, Vec<RawUnit>)> {
    match &config.split {
        SplitConfig::InterUnits { train, val, test } => {
            fn as_refs(v: &[String]) -> Vec<&str> {
                v.iter().map(String::as_str).collect()
            }
            let assignment = SplitAssignment::inter(&as_refs(train), &as_refs(val), &as_refs(test))?;
            let listed: Vec<&str> = assignment.units();
            let kept = units
                .into_iter()
                .filter(|u| listed.contains(&u.unit_id.as_str()))
                .collect();
            Ok((assignment, kept))
        }
        SplitConfig::InterFractions { train_frac, val_frac } => {
            let mut ids: Vec<String> = units.iter().map(|u| u.unit_id.clone()).collect();
            ids.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            let n = ids.len() as f64;
            let n_train = (train_frac * n).floor() as usize;
            let n_val = ((val_frac * n).floor() as usize).min(ids.len() - n_train);
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let assignment = SplitAssignment::inter(
                &refs[..n_train],
                &refs[n_train..n_train + n_val],
                &refs[n_train + n_val..],
            )?;
            Ok((assignment, units))
        }
        SplitConfig::Intra(spec) => Ok((resolve_intra_assignment(&units, &config.transforms, *spec)?, units)),
    }
}

fn load_and_split(config: &RunConfig) -> Result<SplitContainer> {
    let units = load_units(config).map_err(|e| e.in_stage("load"))?;
    let (assignment, units) = build_assignment(config, units).map_err(|e| e.in_stage("split"))?;
    let container = SplitContainer::from_raw(&units, assignment).map_err(|e| e.in_stage("split"))?;
    let problems = validate_container(&container);
    if let Some(v) = problems.first() {
        return Err(Error::Integrity(v.message.clone()).in_stage("split"));
    }
    Ok(container)
}

/// Runs the transform pipeline, resuming from the deepest valid cache entry
/// and persisting every checkpoint the run produces.
fn preprocess(config: &RunConfig, store: Option<&CacheStore>, record: &mut CacheRecord) -> Result<PipelineRun> {
    let stages = &config.transforms;
    let Some(store) = store else {
        let cp = PipelineCheckpoint::start(load_and_split(config)?);
        return resume_pipeline(cp, stages, 0, &mut |_, _| Ok(()));
    };
    record.enabled = true;
    let keys = CacheKeys::new(&config.cache_datasource_value()?, stages, CODE_FINGERPRINT)?;
    let found = lookup(store, &keys, deserialize_checkpoint)?;
    record.consulted = found
        .consulted
        .iter()
        .map(|c| ConsultedKey {
            tier: c.tier.tag(),
            key: c.key.clone(),
            hit: c.hit,
        })
        .collect();
    record.quarantined = found.quarantined.iter().map(|p| p.display().to_string()).collect();
    let (cp, start) = match found.hit {
        Some(hit) => {
            record.hit_tier = Some(hit.tier.tag());
            (hit.value, hit.resume_from)
        }
        None => {
            let cp = PipelineCheckpoint::start(load_and_split(config)?);
            store.store(&keys.loaded, &serialize_checkpoint(&cp))?;
            record.stored.push(keys.loaded.hex());
            (cp, 0)
        }
    };
    record.resume_from = start;
    let mut stored = Vec::new();
    let run = resume_pipeline(cp, stages, start, &mut |idx, cp| {
        if let Some(key) = keys.boundary(idx) {
            store.store(key, &serialize_checkpoint(cp))?;
            stored.push(key.hex());
        }
        Ok(())
    })?;
    record.stored.extend(stored);
    if record.hit_tier.as_deref() != Some("preprocessed") {
        let cp = PipelineCheckpoint {
            container: run.container.clone(),
            states: run.states.clone(),
            fit_log: run.fit_log.clone(),
            notes: run.notes.clone(),
        };
        store.store(&keys.preprocessed, &serialize_checkpoint(&cp))?;
        record.stored.push(keys.preprocessed.hex());
    }
    Ok(run)
}

/// Executes one run in memory. `store` is the cache to use, if any.
pub fn execute_run(config: &RunConfig, store: Option<&CacheStore>) -> Result<RunOutcome> {
    let started = now_unix();
    let config_digest = config.digest()?;
    let mut cache = CacheRecord::default();
    let run = preprocess(config, store, &mut cache)?;
    let assignment = run.container.assignment.clone();

    let mut windows = Vec::new();
    for frame in run.container.unique_frames() {
        let aligned = frame.aligned().map_err(|e| e.in_stage("window"))?;
        windows.extend(slice_unit(&aligned, &config.window, SplitTag::Train).map_err(|e| e.in_stage("window"))?);
    }
    let n_windows = windows.len();
    windows.retain(|w| w.y.scalar().is_some_and(|y| !y.is_nan()));
    let unlabeled_windows = n_windows - windows.len();
    let tabular: Vec<TabularSample> = windows.iter().map(TabularSample::from_window).collect();
    drop(windows);
    let mut routed = route_windows(tabular, &assignment).map_err(|e| e.in_stage("route"))?;

    let ids = routed
        .iter()
        .map(|(tag, v)| (*tag, v.iter().map(|s| (s.unit_id.clone(), s.k)).collect()))
        .collect();
    let audit = AuditRecord::new(&assignment, &run.fit_log, ids);
    let violations = leakage_audit(&audit);
    if !violations.is_empty() {
        let msg = violations
            .iter()
            .map(|v| v.message.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Leakage(msg).in_stage("audit"));
    }
    let samples = routed.iter().map(|(t, v)| (*t, v.len())).collect();

    let mut test = routed.remove(&SplitTag::Test).unwrap_or_default();
    let val = routed.remove(&SplitTag::Val).unwrap_or_default();
    let train = routed.remove(&SplitTag::Train).unwrap_or_default();
    if test.is_empty() {
        return Err(Error::Metric("the test split holds no windows".into()).in_stage("route"));
    }
    let sealed = SealedTargets::seal(&mut test);

    let task = config.datasource.task;
    let class_set = &config.datasource.class_set;
    let model = fit_baseline(config.model, &train, task).map_err(|e| e.in_stage("fit"))?;
    let wants_scores = config.evaluator.metrics.contains(&Metric::Auroc);
    let predict = |samples: &[TabularSample]| -> Result<Vec<(f64, Option<Vec<f64>>)>> {
        samples
            .iter()
            .map(|s| {
                let ctx = model.context_for(s, &assignment)?;
                let y_hat = model.predict(s, ctx.as_deref())?;
                let scores = if wants_scores {
                    model.predict_scores(s, ctx.as_deref(), class_set)?
                } else {
                    None
                };
                Ok((y_hat, scores))
            })
            .collect()
    };
    let val_out = predict(&val).map_err(|e| e.in_stage("predict val"))?;
    let test_out = predict(&test).map_err(|e| e.in_stage("predict test"))?;

    let to_predictions = |samples: &[TabularSample], out: Vec<(f64, Option<Vec<f64>>)>, y: &dyn Fn(usize) -> f64| {
        samples
            .iter()
            .zip(out)
            .enumerate()
            .map(|(i, (s, (y_hat, scores)))| Prediction {
                unit_id: s.unit_id.clone(),
                k: s.k,
                y_hat,
                y: y(i),
                scores,
            })
            .collect::<Vec<_>>()
    };
    let val_preds = to_predictions(&val, val_out, &|i| val[i].y.scalar().unwrap_or(f64::NAN));
    let eval_cfg = config.evaluator.eval_config(class_set);
    let metadata: BTreeMap<&str, &BTreeMap<String, String>> = run
        .container
        .unique_frames()
        .into_iter()
        .map(|f| (f.unit_id.as_str(), &f.metadata))
        .collect();
    let descale = |preds: &[Prediction]| -> Result<Option<Vec<Prediction>>> {
        if !config.evaluator.descale {
            return Ok(None);
        }
        let empty = BTreeMap::new();
        descale_predictions(preds, |unit, values| {
            let meta = metadata.get(unit).copied().unwrap_or(&empty);
            invert_target(&config.transforms, &run.states, unit, meta, values)
        })
        .map(Some)
    };
    let val_report = if val_preds.is_empty() {
        None
    } else {
        let d = descale(&val_preds)?;
        Some(evaluate(&val_preds, &eval_cfg, d.as_deref()).map_err(|e| e.in_stage("evaluate val"))?)
    };

    let test_target_reads_before_evaluation = sealed.premature_reads.get();
    sealed.unseal();
    let test_preds = to_predictions(&test, test_out, &|i| sealed.read(i));
    let d = descale(&test_preds)?;
    let test_report = evaluate(&test_preds, &eval_cfg, d.as_deref()).map_err(|e| e.in_stage("evaluate test"))?;

    let metrics_value = json!({
        "test": serde_json::to_value(&test_report)?,
        "val": match &val_report {
            Some(r) => serde_json::to_value(r)?,
            None => Value::Null,
        },
    });
    let metrics_json = String::from_utf8(canonical_bytes(&metrics_value)?).expect("canonical JSON is UTF-8");
    let manifest = RunManifest {
        config_digest,
        code_fingerprint: CODE_FINGERPRINT.to_string(),
        seed: config.seed,
        tool_version: TOOL_VERSION.to_string(),
        metrics_digest: sha256_hex(metrics_json.as_bytes()),
        cache,
        stage_executions: run.stage_executions.clone(),
        samples,
        unlabeled_windows,
        test_target_reads_before_evaluation,
        notes: run.notes.clone(),
        audit,
        started_at_unix: started,
        finished_at_unix: now_unix(),
    };
    let predictions = BTreeMap::from([(SplitTag::Val, val_preds), (SplitTag::Test, test_preds)]);
    Ok(RunOutcome {
        config: config.clone(),
        test: test_report,
        val: val_report,
        metrics_json,
        manifest,
        predictions,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(&serde_json::to_value(v)?)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Writes the run directory: resolved config, metrics, manifest and, when
/// requested, predictions.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(RESOLVED_CONFIG_FILE), &pretty(&outcome.config.to_value()?)?)?;
    write_file(&dir.join(METRICS_FILE), outcome.metrics_json.as_bytes())?;
    write_file(&dir.join(MANIFEST_FILE), &pretty(&outcome.manifest)?)?;
    let predictions = dir.join(PREDICTIONS_FILE);
    if outcome.config.evaluator.dump_predictions {
        write_file(&predictions, &pretty(&outcome.predictions)?)?;
    } else if predictions.exists() {
        std::fs::remove_file(&predictions).map_err(|e| Error::io(&predictions, e))?;
    }
    Ok(())
}

/// The cache to use: an explicit directory, then the config's, then the
/// environment default. `None` disables caching.
pub fn resolve_cache_dir(explicit: Option<PathBuf>, config: &RunConfig, no_cache: bool) -> Option<PathBuf> {
    if no_cache {
        return None;
    }
    explicit
        .or_else(|| config.cache_dir.clone())
        .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_cache: bool,
}

/// Loads a config file, executes it and writes the run directory, which
/// defaults to `runs/<first 12 digest characters>`.
pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<(RunOutcome, PathBuf)> {
    let config = RunConfig::load(path, opts.seed)?;
    let cache_dir = resolve_cache_dir(opts.cache.clone(), &config, opts.no_cache);
    let store = cache_dir.map(CacheStore::new);
    let outcome = execute_run(&config, store.as_ref())?;
    let dir = match &opts.out {
        Some(d) => d.clone(),
        None => PathBuf::from("runs").join(&outcome.manifest.config_digest[..12]),
    };
    write_artifacts(&outcome, &dir)?;
    Ok((outcome, dir))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::Replay(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    read_json(&run_dir.join(MANIFEST_FILE))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayVerdict {
    pub identical: bool,
    pub recorded_metrics_digest: String,
    pub replayed_metrics_digest: String,
    pub code_drift: bool,
}

/// Re-executes a run from its resolved config and compares metric digests.
pub fn replay(run_dir: &Path, allow_code_drift: bool, cache: Option<PathBuf>) -> Result<ReplayVerdict> {
    let manifest = read_manifest(run_dir)?;
    let config_path = run_dir.join(RESOLVED_CONFIG_FILE);
    let bytes = std::fs::read(&config_path)
        .map_err(|e| Error::Replay(format!("cannot read {}: {e}", config_path.display())))?;
    let config = RunConfig::parse(&bytes, None, None)?;
    let code_drift = manifest.code_fingerprint != CODE_FINGERPRINT;
    if code_drift && !allow_code_drift {
        return Err(Error::Replay(format!(
            "the run was produced by code {} but this build is {}; results may differ, pass --allow-code-drift to replay anyway",
            manifest.code_fingerprint, CODE_FINGERPRINT
        )));
    }
    let store = resolve_cache_dir(cache, &config, false).map(CacheStore::new);
    let outcome = execute_run(&config, store.as_ref())?;
    Ok(ReplayVerdict {
        identical: outcome.manifest.metrics_digest == manifest.metrics_digest,
        recorded_metrics_digest: manifest.metrics_digest,
        replayed_metrics_digest: outcome.manifest.metrics_digest,
        code_drift,
    })
}

/// Re-checks the stored leakage record of a run.
pub fn audit(run_dir: &Path) -> Result<Vec<crate::partition::LeakageViolation>> {
    Ok(leakage_audit(&read_manifest(run_dir)?.audit))
}
