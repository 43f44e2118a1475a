//! Strict JSON run configuration. Unknown keys and type mismatches are
//! errors naming the offending path; every default is materialized so the
//! resolved form alone reproduces the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::cache::canonical_bytes;
use crate::datasource::{
    AhRulSpec, CsvSchema, DegradationShape, EolRule, SignConvention, SyntheticSpec, SyntheticTask,
};
use crate::error::{Error, Result};
use crate::evaluator::{Aggregation, EvalConfig, Metric, DEFAULT_NASA_EARLY, DEFAULT_NASA_LATE, DEFAULT_PHM_EPSILON};
use crate::models::{ModelKind, Task};
use crate::partition::{BoundarySpec, ContextSelection, ContextSpec};
use crate::transforms::{
    AggregationRule, AlignmentRule, CorruptMode, FitOn, FitScope, ImputeMode, PostMap, SegmentStat, StageKind,
    StageSpec, StatDomain,
};
use crate::windowing::{PadPolicy, WindowSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceConfig {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasourceConfig {
    pub source: SourceConfig,
    pub task: Task,
    /// Declared classes; empty for regression.
    pub class_set: Vec<i64>,
    /// Replace the loaded target with remaining discharge throughput.
    pub ah_rul: Option<AhRulSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitConfig {
    /// Explicit unit lists; units not listed are not used.
    InterUnits {
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    },
    /// Units in id order: the first floor(train_frac n) train, the next
    /// floor(val_frac n) val, the rest test.
    InterFractions {
        train_frac: f64,
        val_frac: f64,
    },
    Intra(BoundarySpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorConfig {
    pub aggregation: Aggregation,
    pub metrics: Vec<Metric>,
    pub descale: bool,
    pub phm_epsilon: f64,
    pub nasa_early: f64,
    pub nasa_late: f64,
    pub dump_predictions: bool,
}

impl EvaluatorConfig {
    pub fn eval_config(&self, class_set: &[i64]) -> EvalConfig {
        EvalConfig {
            aggregation: self.aggregation,
            metrics: self.metrics.clone(),
            phm_epsilon: self.phm_epsilon,
            nasa_early: self.nasa_early,
            nasa_late: self.nasa_late,
            class_set: class_set.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub datasource: DatasourceConfig,
    pub transforms: Vec<StageSpec>,
    pub window: WindowSpec,
    pub split: SplitConfig,
    pub model: ModelKind,
    pub evaluator: EvaluatorConfig,
    pub seed: u64,
    /// Where the cache lives; not part of the config digest.
    pub cache_dir: Option<PathBuf>,
}

type Obj = Map<String, Value>;

fn cfg_err(path: &str, message: impl Into<String>) -> Error {
    Error::config(path, message)
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Obj> {
    v.as_object()
        .ok_or_else(|| cfg_err(path, format!("expected an object, found {}", type_name(v))))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn check_keys(obj: &Obj, path: &str, allowed: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(cfg_err(&join(path, k), "unknown key")),
        None => Ok(()),
    }
}

/// Typed access to one object of the document.
struct Block<'a> {
    obj: &'a Obj,
    path: String,
}

impl<'a> Block<'a> {
    fn new(v: &'a Value, path: &str, allowed: &[&str]) -> Result<Self> {
        let obj = as_object(v, path)?;
        check_keys(obj, path, allowed)?;
        Ok(Self {
            obj,
            path: path.to_string(),
        })
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    /// The value, treating an explicit null as absent.
    fn get(&self, key: &str) -> Option<&'a Value> {
        self.obj.get(key).filter(|v| !v.is_null())
    }

    fn required(&self, key: &str) -> Result<&'a Value> {
        self.get(key)
            .ok_or_else(|| cfg_err(&self.at(key), "missing required key"))
    }

    fn usize_or(&self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.get(key) {
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| cfg_err(&self.at(key), format!("expected a non-negative integer, found {v}"))),
            None => default.ok_or_else(|| cfg_err(&self.at(key), "missing required key")),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| cfg_err(&self.at(key), format!("expected a non-negative integer, found {v}"))),
            None => Ok(default),
        }
    }

    fn f64_or(&self, key: &str, default: Option<f64>) -> Result<f64> {
        match self.get(key) {
            Some(v) => v
                .as_f64()
                .ok_or_else(|| cfg_err(&self.at(key), format!("expected a number, found {v}"))),
            None => default.ok_or_else(|| cfg_err(&self.at(key), "missing required key")),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            Some(v) => v
                .as_bool()
                .ok_or_else(|| cfg_err(&self.at(key), format!("expected a boolean, found {v}"))),
            None => Ok(default),
        }
    }

    fn str_or(&self, key: &str, default: Option<&str>) -> Result<String> {
        match self.get(key) {
            Some(v) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| cfg_err(&self.at(key), format!("expected a string, found {v}"))),
            None => default
                .map(str::to_string)
                .ok_or_else(|| cfg_err(&self.at(key), "missing required key")),
        }
    }

    fn choice<T>(&self, key: &str, default: Option<&str>, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
        let s = self.str_or(key, default)?;
        parse(&s).ok_or_else(|| cfg_err(&self.at(key), format!("unrecognized value `{s}`")))
    }

    fn strings(&self, key: &str, default: Option<Vec<String>>) -> Result<Vec<String>> {
        match self.get(key) {
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| cfg_err(&format!("{}[{i}]", self.at(key)), "expected a string"))
                })
                .collect(),
            Some(v) => Err(cfg_err(
                &self.at(key),
                format!("expected an array, found {}", type_name(v)),
            )),
            None => default.ok_or_else(|| cfg_err(&self.at(key), "missing required key")),
        }
    }

    fn integers(&self, key: &str) -> Result<Option<Vec<i64>>> {
        match self.get(key) {
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_i64()
                        .ok_or_else(|| cfg_err(&format!("{}[{i}]", self.at(key)), "expected an integer"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(cfg_err(
                &self.at(key),
                format!("expected an array, found {}", type_name(v)),
            )),
            None => Ok(None),
        }
    }
}

fn parse_datasource(v: &Value, seed: u64, base_dir: Option<&Path>) -> Result<DatasourceConfig> {
    let obj = as_object(v, "datasource")?;
    let kind = obj.get("kind").and_then(Value::as_str).unwrap_or_default();
    const COMMON: [&str; 4] = ["kind", "task", "class_set", "ah_rul"];
    let (source, b) = match kind {
        "synthetic" => {
            let b = Block::new(
                v,
                "datasource",
                &[
                    &COMMON[..],
                    &[
                        "n_units",
                        "t_min",
                        "t_max",
                        "channels",
                        "shape",
                        "noise_std",
                        "seed",
                        "classes",
                    ],
                ]
                .concat(),
            )?;
            let d = SyntheticSpec::default();
            let task = b.choice("task", Some("regression"), Task::parse)?;
            let synth_task = match task {
                Task::Regression => {
                    if b.get("classes").is_some() {
                        return Err(cfg_err(&b.at("classes"), "only valid for classification"));
                    }
                    SyntheticTask::Prognostics
                }
                Task::Classification => SyntheticTask::Diagnostics {
                    classes: b.usize_or("classes", Some(3))?,
                },
            };
            let spec = SyntheticSpec {
                n_units: b.usize_or("n_units", Some(d.n_units))?,
                t_range: (
                    b.usize_or("t_min", Some(d.t_range.0))?,
                    b.usize_or("t_max", Some(d.t_range.1))?,
                ),
                channels: b.usize_or("channels", Some(d.channels))?,
                shape: b.choice("shape", Some(d.shape.as_str()), DegradationShape::parse)?,
                noise_std: b.f64_or("noise_std", Some(d.noise_std))?,
                seed: b.u64_or("seed", seed)?,
                task: synth_task,
            };
            spec.validate().map_err(|e| cfg_err("datasource", e.to_string()))?;
            (SourceConfig::Synthetic(spec), b)
        }
        "csv" => {
            let b = Block::new(
                v,
                "datasource",
                &[
                    &COMMON[..],
                    &["path", "unit_column", "time_column", "feature_columns", "target_column"],
                ]
                .concat(),
            )?;
            let d = CsvSchema::default();
            let mut path = PathBuf::from(b.str_or("path", None)?);
            if path.is_relative() {
                if let Some(base) = base_dir {
                    path = base.join(path);
                }
            }
            let schema = CsvSchema {
                unit_column: b.str_or("unit_column", Some(&d.unit_column))?,
                time_column: b.str_or("time_column", Some(&d.time_column))?,
                feature_columns: b.strings("feature_columns", Some(Vec::new()))?,
                target_column: b.str_or("target_column", Some(&d.target_column))?,
            };
            (SourceConfig::Csv { path, schema }, b)
        }
        other => {
            return Err(cfg_err(
                "datasource.kind",
                format!("expected `synthetic` or `csv`, found `{other}`"),
            ))
        }
    };
    let task = b.choice("task", Some("regression"), Task::parse)?;
    let class_set = match (task, b.integers("class_set")?, &source) {
        (Task::Regression, Some(_), _) => return Err(cfg_err(&b.at("class_set"), "only valid for classification")),
        (Task::Regression, None, _) => Vec::new(),
        (Task::Classification, Some(mut cs), _) => {
            cs.sort_unstable();
            cs.dedup();
            cs
        }
        (Task::Classification, None, SourceConfig::Synthetic(s)) => match s.task {
            SyntheticTask::Diagnostics { classes } => (0..classes as i64).collect(),
            SyntheticTask::Prognostics => Vec::new(),
        },
        (Task::Classification, None, SourceConfig::Csv { .. }) => {
            return Err(cfg_err(
                &b.at("class_set"),
                "classification over csv data needs a declared class set",
            ))
        }
    };
    if task == Task::Classification && class_set.is_empty() {
        return Err(cfg_err(&b.at("class_set"), "class set must not be empty"));
    }
    let ah_rul = match b.get("ah_rul") {
        Some(v) => {
            if task != Task::Regression {
                return Err(cfg_err(&b.at("ah_rul"), "ah-RUL targets are regression targets"));
            }
            let a = Block::new(
                v,
                &b.at("ah_rul"),
                &[
                    "q_nom",
                    "current_channel",
                    "sign_convention",
                    "eol_rule",
                    "eol_threshold",
                ],
            )?;
            let eol_rule = match a.str_or("eol_rule", Some("last_cycle"))?.as_str() {
                "last_cycle" => EolRule::LastCycle,
                "threshold" => EolRule::Threshold(a.f64_or("eol_threshold", None)?),
                other => return Err(cfg_err(&a.at("eol_rule"), format!("unrecognized value `{other}`"))),
            };
            Some(AhRulSpec {
                q_nom: a.f64_or("q_nom", None)?,
                current_channel: a.str_or("current_channel", None)?,
                sign_convention: a.choice("sign_convention", Some("positive_discharge"), |s| match s {
                    "positive_discharge" => Some(SignConvention::PositiveDischarge),
                    "negative_discharge" => Some(SignConvention::NegativeDischarge),
                    _ => None,
                })?,
                eol_rule,
            })
        }
        None => None,
    };
    Ok(DatasourceConfig {
        source,
        task,
        class_set,
        ah_rul,
    })
}

const STAGE_COMMON: [&str; 8] = [
    "kind",
    "name",
    "apply_to",
    "assign_to",
    "fit_on",
    "cache_point",
    "fit_scope",
    "align",
];

fn parse_stage(v: &Value, path: &str, seed: u64) -> Result<StageSpec> {
    let obj = as_object(v, path)?;
    let kind_name = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| cfg_err(&join(path, "kind"), "missing required key"))?;
    let extra: &[&str] = match kind_name {
        "identity" | "minmax" | "standard" | "cumsum_squared" | "concatenate" => &[],
        "constant" => &["factor"],
        "windowed_aggregation" => &["rule", "window", "stride"],
        "stft" => &["window", "stride", "n_fft", "post_map"],
        "time_stats" | "spectral_stats" => &["stats"],
        "subsample" => &["rate"],
        "pad_to_length" => &["length", "value"],
        "select_channels" => &["channels"],
        "impute" => &["mode"],
        "mcar_corrupt" => &["mode", "ratio", "min_len", "max_len", "seed"],
        "health_index" => &["lifetimes", "lifetime_key"],
        "concept_classes" => &["dataset_key"],
        other => {
            return Err(cfg_err(
                &join(path, "kind"),
                format!("unknown transform kind `{other}`"),
            ))
        }
    };
    let b = Block::new(v, path, &[&STAGE_COMMON[..], extra].concat())?;
    let kind = match kind_name {
        "identity" => StageKind::Identity,
        "minmax" => StageKind::MinMax,
        "standard" => StageKind::Standard,
        "cumsum_squared" => StageKind::CumSumSquared,
        "concatenate" => StageKind::Concatenate,
        "constant" => StageKind::Constant {
            factor: b.f64_or("factor", None)?,
        },
        "windowed_aggregation" => StageKind::WindowedAggregation {
            rule: b.choice("rule", Some("mean"), AggregationRule::parse)?,
            window: b.usize_or("window", None)?,
            stride: b.usize_or("stride", None)?,
        },
        "stft" => {
            let window = b.usize_or("window", None)?;
            StageKind::Stft {
                window,
                stride: b.usize_or("stride", None)?,
                n_fft: b.usize_or("n_fft", Some(window))?,
                post_map: b.choice("post_map", Some("magnitude"), PostMap::parse)?,
            }
        }
        "time_stats" | "spectral_stats" => {
            let names = b.strings("stats", None)?;
            let stats = names
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    SegmentStat::parse(s)
                        .ok_or_else(|| cfg_err(&format!("{}[{i}]", b.at("stats")), format!("unknown statistic `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let domain = if kind_name == "time_stats" {
                StatDomain::Time
            } else {
                StatDomain::Frequency
            };
            StageKind::SegmentStats { domain, stats }
        }
        "subsample" => StageKind::Subsample {
            rate: b.usize_or("rate", None)?,
        },
        "pad_to_length" => StageKind::PadToLength {
            length: b.usize_or("length", None)?,
            value: b.f64_or("value", Some(0.0))?,
        },
        "select_channels" => StageKind::SelectChannels {
            channels: match b.required("channels")? {
                Value::Array(items) => items
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.as_u64()
                            .map(|n| n as usize)
                            .ok_or_else(|| cfg_err(&format!("{}[{i}]", b.at("channels")), "expected an index"))
                    })
                    .collect::<Result<Vec<_>>>()?,
                other => {
                    return Err(cfg_err(
                        &b.at("channels"),
                        format!("expected an array, found {}", type_name(other)),
                    ))
                }
            },
        },
        "impute" => StageKind::Impute {
            mode: b.choice("mode", Some("mean"), ImputeMode::parse)?,
        },
        "mcar_corrupt" => {
            let ratio = b.f64_or("ratio", None)?;
            let mode = match b.str_or("mode", Some("point"))?.as_str() {
                "point" => {
                    for k in ["min_len", "max_len"] {
                        if b.get(k).is_some() {
                            return Err(cfg_err(&b.at(k), "only valid for block corruption"));
                        }
                    }
                    CorruptMode::Point { ratio }
                }
                "block" => CorruptMode::Block {
                    ratio,
                    min_len: b.usize_or("min_len", None)?,
                    max_len: b.usize_or("max_len", None)?,
                },
                other => return Err(cfg_err(&b.at("mode"), format!("unrecognized value `{other}`"))),
            };
            StageKind::Corrupt {
                mode,
                seed: b.u64_or("seed", seed)?,
            }
        }
        "health_index" => {
            let mut lifetimes = BTreeMap::new();
            if let Some(table) = b.get("lifetimes") {
                let lt = Block {
                    obj: as_object(table, &b.at("lifetimes"))?,
                    path: b.at("lifetimes"),
                };
                for key in lt.obj.keys() {
                    lifetimes.insert(key.clone(), lt.f64_or(key, None)?);
                }
            }
            StageKind::HealthIndex {
                lifetimes,
                lifetime_key: b.str_or("lifetime_key", Some("lifetime"))?,
            }
        }
        "concept_classes" => StageKind::ConceptClasses {
            dataset_key: b.str_or("dataset_key", Some("dataset_id"))?,
        },
        _ => unreachable!("kind checked above"),
    };
    let stateful = kind.is_stateful();
    let changes_grid = kind.changes_grid();
    let apply_to = b.strings("apply_to", Some(vec![crate::model::FEATURES_KEY.to_string()]))?;
    let default_assign = apply_to.first().cloned().unwrap_or_default();
    let fit_on = match b.get("fit_on") {
        None => {
            if stateful {
                FitOn::Train
            } else {
                FitOn::None
            }
        }
        Some(Value::String(s)) if s == "train" => FitOn::Train,
        Some(other) => {
            return Err(cfg_err(
                &b.at("fit_on"),
                format!("expected \"train\" or null, found {other}"),
            ))
        }
    };
    let align = if changes_grid {
        Some(b.choice("align", Some("last"), AlignmentRule::parse)?)
    } else {
        if b.get("align").is_some() {
            return Err(cfg_err(&b.at("align"), "only valid for grid-changing transforms"));
        }
        None
    };
    let spec = StageSpec {
        name: b.str_or("name", Some(kind.name()))?,
        apply_to,
        assign_to: b.str_or("assign_to", Some(&default_assign))?,
        fit_on,
        cache_point: b.bool_or("cache_point", false)?,
        fit_scope: b.choice("fit_scope", Some("pooled"), |s| match s {
            "pooled" => Some(FitScope::Pooled),
            "per-unit" => Some(FitScope::PerUnit),
            _ => None,
        })?,
        align,
        kind,
    };
    spec.validate().map_err(|e| cfg_err(path, e.to_string()))?;
    Ok(spec)
}

fn parse_window(v: &Value) -> Result<WindowSpec> {
    let b = Block::new(
        v,
        "window",
        &[
            "L_seq",
            "stride",
            "warm_start",
            "offset",
            "pred_len",
            "lbl_len",
            "pad_policy",
        ],
    )?;
    let spec = WindowSpec {
        seq_len: b.usize_or("L_seq", None)?,
        stride: b.usize_or("stride", Some(1))?,
        warm_start: b.usize_or("warm_start", Some(0))?,
        offset: b.usize_or("offset", Some(0))?,
        pred_len: b.usize_or("pred_len", Some(1))?,
        lbl_len: match b.get("lbl_len") {
            Some(_) => Some(b.usize_or("lbl_len", None)?),
            None => None,
        },
        pad_policy: b.choice("pad_policy", Some("replicate-edge"), PadPolicy::parse)?,
    };
    spec.validate().map_err(|e| cfg_err("window", e.to_string()))?;
    Ok(spec)
}

fn parse_split(v: &Value) -> Result<SplitConfig> {
    let b = Block::new(v, "split", &["mode", "units", "unit_fractions", "boundaries"])?;
    let mode = b.str_or("mode", None)?;
    let cfg = match mode.as_str() {
        "inter" => {
            if b.get("boundaries").is_some() {
                return Err(cfg_err(&b.at("boundaries"), "only valid for intra-unit splits"));
            }
            match (b.get("units"), b.get("unit_fractions")) {
                (Some(u), None) => {
                    let u = Block::new(u, &b.at("units"), &["train", "val", "test"])?;
                    SplitConfig::InterUnits {
                        train: u.strings("train", None)?,
                        val: u.strings("val", Some(Vec::new()))?,
                        test: u.strings("test", None)?,
                    }
                }
                (None, Some(f)) => {
                    let f = Block::new(f, &b.at("unit_fractions"), &["train_frac", "val_frac"])?;
                    let cfg = SplitConfig::InterFractions {
                        train_frac: f.f64_or("train_frac", None)?,
                        val_frac: f.f64_or("val_frac", Some(0.0))?,
                    };
                    let SplitConfig::InterFractions { train_frac, val_frac } = cfg else {
                        unreachable!()
                    };
                    BoundarySpec::Fractions { train_frac, val_frac }
                        .validate()
                        .map_err(|e| cfg_err(&b.at("unit_fractions"), e.to_string()))?;
                    cfg
                }
                _ => {
                    return Err(cfg_err(
                        &b.path,
                        "inter-unit splits need exactly one of `units` or `unit_fractions`",
                    ))
                }
            }
        }
        "intra" => {
            for k in ["units", "unit_fractions"] {
                if b.get(k).is_some() {
                    return Err(cfg_err(&b.at(k), "only valid for inter-unit splits"));
                }
            }
            let bv = b.required("boundaries")?;
            let obj = as_object(bv, &b.at("boundaries"))?;
            let spec = if obj.contains_key("tau_train") || obj.contains_key("tau_val") {
                let f = Block::new(bv, &b.at("boundaries"), &["tau_train", "tau_val"])?;
                BoundarySpec::Absolute {
                    tau_train: f.usize_or("tau_train", None)?,
                    tau_val: f.usize_or("tau_val", None)?,
                }
            } else {
                let f = Block::new(bv, &b.at("boundaries"), &["train_frac", "val_frac"])?;
                BoundarySpec::Fractions {
                    train_frac: f.f64_or("train_frac", None)?,
                    val_frac: f.f64_or("val_frac", Some(0.0))?,
                }
            };
            spec.validate()
                .map_err(|e| cfg_err(&b.at("boundaries"), e.to_string()))?;
            SplitConfig::Intra(spec)
        }
        other => {
            return Err(cfg_err(
                &b.at("mode"),
                format!("expected `inter` or `intra`, found `{other}`"),
            ))
        }
    };
    Ok(cfg)
}

fn parse_model(v: &Value, seed: u64) -> Result<ModelKind> {
    let kind = v.get("kind").and_then(Value::as_str).unwrap_or_default();
    let allowed: &[&str] = if kind == "knn" {
        &["kind", "k", "context"]
    } else {
        &["kind"]
    };
    let b = Block::new(v, "model", allowed)?;
    Ok(match b.str_or("kind", None)?.as_str() {
        "mean" => ModelKind::Mean,
        "majority" => ModelKind::Majority,
        "linear_ls" => ModelKind::LinearLs,
        "exponential" => ModelKind::Exponential,
        "knn" => {
            let k = b.usize_or("k", None)?;
            if k == 0 {
                return Err(cfg_err(&b.at("k"), "must be >= 1"));
            }
            let empty = json!({});
            let c = Block::new(
                b.get("context").unwrap_or(&empty),
                &b.at("context"),
                &["size", "selection", "seed", "enforce_intra_boundary"],
            )?;
            let selection = match c.str_or("selection", Some("nearest"))?.as_str() {
                "nearest" => {
                    if c.get("seed").is_some() {
                        return Err(cfg_err(&c.at("seed"), "only valid for random selection"));
                    }
                    ContextSelection::Nearest
                }
                "random" => ContextSelection::Random {
                    seed: c.u64_or("seed", seed)?,
                },
                other => return Err(cfg_err(&c.at("selection"), format!("unrecognized value `{other}`"))),
            };
            let size = c.usize_or("size", Some(k))?;
            if size == 0 {
                return Err(cfg_err(&c.at("size"), "must be >= 1"));
            }
            ModelKind::Knn {
                k,
                context: ContextSpec {
                    size,
                    selection,
                    enforce_intra_boundary: c.bool_or("enforce_intra_boundary", true)?,
                },
            }
        }
        other => return Err(cfg_err(&b.at("kind"), format!("unknown model kind `{other}`"))),
    })
}

fn parse_evaluator(v: &Value, task: Task) -> Result<EvaluatorConfig> {
    let b = Block::new(
        v,
        "evaluator",
        &[
            "aggregation",
            "metrics",
            "descale",
            "phm_epsilon",
            "nasa_early",
            "nasa_late",
            "dump_predictions",
        ],
    )?;
    let default_metrics: Vec<String> = match task {
        Task::Regression => vec!["mae", "mse", "rmse"],
        Task::Classification => vec!["accuracy", "macro_f1"],
    }
    .into_iter()
    .map(String::from)
    .collect();
    let names = b.strings("metrics", Some(default_metrics))?;
    let mut metrics = Vec::new();
    for (i, n) in names.iter().enumerate() {
        let path = format!("{}[{i}]", b.at("metrics"));
        let m = Metric::parse(n).ok_or_else(|| cfg_err(&path, format!("unknown metric `{n}`")))?;
        if m.is_regression() != (task == Task::Regression) {
            return Err(cfg_err(
                &path,
                format!("`{n}` does not apply to {} tasks", task.as_str()),
            ));
        }
        if metrics.contains(&m) {
            return Err(cfg_err(&path, format!("`{n}` listed twice")));
        }
        metrics.push(m);
    }
    if metrics.is_empty() {
        return Err(cfg_err(&b.at("metrics"), "at least one metric is required"));
    }
    let positive = |key: &str, default: f64| -> Result<f64> {
        let x = b.f64_or(key, Some(default))?;
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(cfg_err(&b.at(key), "must be positive"))
        }
    };
    let descale = b.bool_or("descale", false)?;
    if descale && task == Task::Classification {
        return Err(cfg_err(&b.at("descale"), "class codes cannot be descaled"));
    }
    Ok(EvaluatorConfig {
        aggregation: b.choice("aggregation", Some("window"), Aggregation::parse)?,
        metrics,
        descale,
        phm_epsilon: positive("phm_epsilon", DEFAULT_PHM_EPSILON)?,
        nasa_early: positive("nasa_early", DEFAULT_NASA_EARLY)?,
        nasa_late: positive("nasa_late", DEFAULT_NASA_LATE)?,
        dump_predictions: b.bool_or("dump_predictions", false)?,
    })
}

impl RunConfig {
    /// Parses a configuration document. `seed_override` replaces the
    /// top-level seed before defaults are filled; relative CSV paths are
    /// resolved against `base_dir`.
    pub fn parse(bytes: &[u8], seed_override: Option<u64>, base_dir: Option<&Path>) -> Result<Self> {
        let doc: Value = serde_json::from_slice(bytes).map_err(|e| cfg_err("", format!("invalid JSON: {e}")))?;
        let root = Block::new(
            &doc,
            "",
            &[
                "datasource",
                "transforms",
                "window",
                "split",
                "model",
                "evaluator",
                "seed",
                "cache_dir",
            ],
        )?;
        let seed = match seed_override {
            Some(s) => s,
            None => root.u64_or("seed", 0)?,
        };
        let datasource = parse_datasource(root.required("datasource")?, seed, base_dir)?;
        let transforms = match root.get("transforms") {
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| parse_stage(v, &format!("transforms[{i}]"), seed))
                .collect::<Result<Vec<_>>>()?,
            Some(other) => {
                return Err(cfg_err(
                    "transforms",
                    format!("expected an array, found {}", type_name(other)),
                ))
            }
            None => Vec::new(),
        };
        check_references(&transforms)?;
        let window = parse_window(root.required("window")?)?;
        let split = parse_split(root.required("split")?)?;
        let model = parse_model(root.required("model")?, seed)?;
        let task = datasource.task;
        if !model_supports(&model, task) {
            return Err(cfg_err(
                "model.kind",
                format!("`{}` does not support {} tasks", model.name(), task.as_str()),
            ));
        }
        let empty = json!({});
        let evaluator = parse_evaluator(root.get("evaluator").unwrap_or(&empty), task)?;
        if window.lbl_len.is_some() {
            return Err(cfg_err(
                "window.lbl_len",
                "the baselines predict one scalar label per window",
            ));
        }
        let cache_dir = match root.get("cache_dir") {
            Some(_) => Some(PathBuf::from(root.str_or("cache_dir", None)?)),
            None => None,
        };
        Ok(Self {
            datasource,
            transforms,
            window,
            split,
            model,
            evaluator,
            seed,
            cache_dir,
        })
    }

    pub fn load(path: impl AsRef<Path>, seed_override: Option<u64>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes, seed_override, path.parent())
    }

    pub fn datasource_value(&self) -> Value {
        let d = &self.datasource;
        let mut m = Map::new();
        m.insert("task".into(), json!(d.task.as_str()));
        if d.task == Task::Classification {
            m.insert("class_set".into(), json!(d.class_set));
        }
        match &d.source {
            SourceConfig::Synthetic(s) => {
                m.insert("kind".into(), json!("synthetic"));
                m.insert("n_units".into(), json!(s.n_units));
                m.insert("t_min".into(), json!(s.t_range.0));
                m.insert("t_max".into(), json!(s.t_range.1));
                m.insert("channels".into(), json!(s.channels));
                m.insert("shape".into(), json!(s.shape.as_str()));
                m.insert("noise_std".into(), json!(s.noise_std));
                m.insert("seed".into(), json!(s.seed));
                if let SyntheticTask::Diagnostics { classes } = s.task {
                    m.insert("classes".into(), json!(classes));
                }
            }
            SourceConfig::Csv { path, schema } => {
                m.insert("kind".into(), json!("csv"));
                m.insert("path".into(), json!(path.to_string_lossy()));
                m.insert("unit_column".into(), json!(schema.unit_column));
                m.insert("time_column".into(), json!(schema.time_column));
                m.insert("feature_columns".into(), json!(schema.feature_columns));
                m.insert("target_column".into(), json!(schema.target_column));
            }
        }
        if let Some(a) = &d.ah_rul {
            let mut am = Map::new();
            am.insert("q_nom".into(), json!(a.q_nom));
            am.insert("current_channel".into(), json!(a.current_channel));
            am.insert(
                "sign_convention".into(),
                json!(match a.sign_convention {
                    SignConvention::PositiveDischarge => "positive_discharge",
                    SignConvention::NegativeDischarge => "negative_discharge",
                }),
            );
            match a.eol_rule {
                EolRule::LastCycle => {
                    am.insert("eol_rule".into(), json!("last_cycle"));
                }
                EolRule::Threshold(x) => {
                    am.insert("eol_rule".into(), json!("threshold"));
                    am.insert("eol_threshold".into(), json!(x));
                }
            }
            m.insert("ah_rul".into(), Value::Object(am));
        }
        Value::Object(m)
    }

    pub fn split_value(&self) -> Value {
        match &self.split {
            SplitConfig::InterUnits { train, val, test } => {
                json!({"mode": "inter", "units": {"train": train, "val": val, "test": test}})
            }
            SplitConfig::InterFractions { train_frac, val_frac } => {
                json!({"mode": "inter", "unit_fractions": {"train_frac": train_frac, "val_frac": val_frac}})
            }
            SplitConfig::Intra(BoundarySpec::Fractions { train_frac, val_frac }) => {
                json!({"mode": "intra", "boundaries": {"train_frac": train_frac, "val_frac": val_frac}})
            }
            SplitConfig::Intra(BoundarySpec::Absolute { tau_train, tau_val }) => {
                json!({"mode": "intra", "boundaries": {"tau_train": tau_train, "tau_val": tau_val}})
            }
        }
    }

    fn model_value(&self) -> Value {
        match self.model {
            ModelKind::Knn { k, context } => {
                let mut c = json!({
                    "size": context.size,
                    "enforce_intra_boundary": context.enforce_intra_boundary,
                });
                match context.selection {
                    ContextSelection::Nearest => c["selection"] = json!("nearest"),
                    ContextSelection::Random { seed } => {
                        c["selection"] = json!("random");
                        c["seed"] = json!(seed);
                    }
                }
                json!({"kind": "knn", "k": k, "context": c})
            }
            other => json!({"kind": other.name()}),
        }
    }

    fn window_value(&self) -> Value {
        let w = &self.window;
        json!({
            "L_seq": w.seq_len,
            "stride": w.stride,
            "warm_start": w.warm_start,
            "offset": w.offset,
            "pred_len": w.pred_len,
            "lbl_len": w.lbl_len,
            "pad_policy": w.pad_policy.as_str(),
        })
    }

    fn evaluator_value(&self) -> Value {
        let e = &self.evaluator;
        json!({
            "aggregation": e.aggregation.as_str(),
            "metrics": e.metrics.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "descale": e.descale,
            "phm_epsilon": e.phm_epsilon,
            "nasa_early": e.nasa_early,
            "nasa_late": e.nasa_late,
            "dump_predictions": e.dump_predictions,
        })
    }

    pub fn transforms_value(&self) -> Result<Value> {
        Ok(Value::Array(
            self.transforms
                .iter()
                .map(StageSpec::to_config_value)
                .collect::<Result<Vec<_>>>()?,
        ))
    }

    /// The self-contained resolved configuration.
    pub fn to_value(&self) -> Result<Value> {
        let mut v = self.digest_value()?;
        if let Some(dir) = &self.cache_dir {
            v["cache_dir"] = json!(dir.to_string_lossy());
        }
        Ok(v)
    }

    fn digest_value(&self) -> Result<Value> {
        Ok(json!({
            "datasource": self.datasource_value(),
            "transforms": self.transforms_value()?,
            "window": self.window_value(),
            "split": self.split_value(),
            "model": self.model_value(),
            "evaluator": self.evaluator_value(),
            "seed": self.seed,
        }))
    }

    /// SHA-256 over the canonical resolved form, excluding the cache location.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(canonical_bytes(&self.digest_value()?)?)))
    }

    /// Everything that determines the loaded and split container. Intra-unit
    /// boundaries depend on the transformed length, so the transform list is
    /// part of it in that regime.
    pub fn cache_datasource_value(&self) -> Result<Value> {
        let mut v = json!({"datasource": self.datasource_value(), "split": self.split_value()});
        if matches!(self.split, SplitConfig::Intra(_)) {
            v["transforms"] = self.transforms_value()?;
        }
        Ok(v)
    }
}

fn model_supports(model: &ModelKind, task: Task) -> bool {
    match model {
        ModelKind::Mean | ModelKind::LinearLs | ModelKind::Exponential => task == Task::Regression,
        ModelKind::Majority => task == Task::Classification,
        ModelKind::Knn { .. } => true,
    }
}

/// Every key a stage reads must exist when it runs.
fn check_references(stages: &[StageSpec]) -> Result<()> {
    let mut keys: Vec<String> = vec![crate::model::FEATURES_KEY.into(), crate::model::TARGET_KEY.into()];
    for (i, s) in stages.iter().enumerate() {
        for (j, k) in s.apply_to.iter().enumerate() {
            if !keys.contains(k) {
                return Err(cfg_err(
                    &format!("transforms[{i}].apply_to[{j}]"),
                    format!("container key `{k}` is not defined by the datasource or an earlier transform"),
                ));
            }
        }
        if !keys.contains(&s.assign_to) {
            keys.push(s.assign_to.clone());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "datasource": {"kind": "synthetic"},
        "transforms": [{"kind": "identity"}],
        "window": {"L_seq": 3},
        "split": {"mode": "intra", "boundaries": {"train_frac": 0.6, "val_frac": 0.2}},
        "model": {"kind": "mean"}
    }"#;

    #[test]
    fn minimal_config_materializes_defaults() {
        let cfg = RunConfig::parse(MINIMAL.as_bytes(), None, None).unwrap();
        let v = cfg.to_value().unwrap();
        assert_eq!(v["window"]["stride"], json!(1));
        assert_eq!(v["window"]["pad_policy"], json!("replicate-edge"));
        assert_eq!(v["datasource"]["n_units"], json!(4));
        assert_eq!(v["evaluator"]["metrics"], json!(["mae", "mse", "rmse"]));
        assert_eq!(v["transforms"][0]["fit_scope"], json!("pooled"));
        let again = RunConfig::parse(&serde_json::to_vec(&v).unwrap(), None, None).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn typo_is_reported_with_its_path() {
        let bad = MINIMAL.replace(r#""L_seq": 3"#, r#""L_seq": 3, "strid": 2"#);
        match RunConfig::parse(bad.as_bytes(), None, None) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "window.strid"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn key_order_does_not_change_the_digest() {
        let a = RunConfig::parse(MINIMAL.as_bytes(), None, None).unwrap();
        let reordered = r#"{"model": {"kind": "mean"}, "split": {"boundaries": {"val_frac": 0.2, "train_frac": 0.6}, "mode": "intra"},
            "window": {"stride": 1, "L_seq": 3}, "transforms": [{"kind": "identity"}], "datasource": {"kind": "synthetic", "seed": 0}}"#;
        let b = RunConfig::parse(reordered.as_bytes(), None, None).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let mut c = b.clone();
        c.cache_dir = Some("/elsewhere".into());
        assert_eq!(a.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn unresolved_container_key_is_rejected() {
        let bad = MINIMAL.replace(r#"{"kind": "identity"}"#, r#"{"kind": "minmax", "apply_to": ["nope"]}"#);
        match RunConfig::parse(bad.as_bytes(), None, None) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "transforms[0].apply_to[0]"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn metric_must_match_task() {
        let bad = MINIMAL.replace(
            r#""model": {"kind": "mean"}"#,
            r#""model": {"kind": "mean"}, "evaluator": {"metrics": ["accuracy"]}"#,
        );
        assert!(matches!(
            RunConfig::parse(bad.as_bytes(), None, None),
            Err(Error::Config { .. })
        ));
    }
}
