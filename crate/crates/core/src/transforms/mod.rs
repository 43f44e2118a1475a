//! Feature and target pipelines with explicit raw-time support tracking.
//!
//! Every stage is described by a [`StageSpec`]; stateful stages are fitted on
//! the training partition only and then applied frozen to every split. Stages
//! that change the temporal grid emit stage-local supports, which the
//! pipeline composes back to raw time and uses to realign the target.

mod aggregate;
mod align;
mod domain;
mod pipeline;
mod repair;
mod scale;
mod spectral;
mod state;
mod structural;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub use aggregate::{apply_cumsum_squared, apply_windowed_aggregation};
pub use align::align_target;
pub use domain::{apply_health_index, encode_concept_class, ConceptLookup, HealthIndexLookup};
pub use pipeline::{
    invert_target, plan_feature_support, resume_pipeline, run_pipeline, FitRecord, PipelineCheckpoint, PipelineRun,
};
pub use repair::{apply_corrupt, apply_repair, CorruptionReport};
pub use scale::{apply_pointwise_scale, ScaleParams};
pub use spectral::{apply_segment_stats, apply_stft, dft_magnitudes};
pub use state::{fit_stage, FitData, FitUnit, FittedTransformState};
pub use structural::{apply_concatenate, apply_pad_to_length, apply_select_channels, apply_subsample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// How a raw-grid target is sampled or pooled onto a transformed index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentRule {
    #[default]
    Last,
    Mean,
    Max,
    /// Most frequent class code; ties go to the smallest code.
    Majority,
}

impl AlignmentRule {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignmentRule::Last => "last",
            AlignmentRule::Mean => "mean",
            AlignmentRule::Max => "max",
            AlignmentRule::Majority => "majority",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "last" => Some(Self::Last),
            "mean" => Some(Self::Mean),
            "max" => Some(Self::Max),
            "majority" => Some(Self::Majority),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationRule {
    Mean,
    Sum,
    Min,
    Max,
    Median,
    Std,
    First,
    Last,
}

impl AggregationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationRule::Mean => "mean",
            AggregationRule::Sum => "sum",
            AggregationRule::Min => "min",
            AggregationRule::Max => "max",
            AggregationRule::Median => "median",
            AggregationRule::Std => "std",
            AggregationRule::First => "first",
            AggregationRule::Last => "last",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mean" => Self::Mean,
            "sum" => Self::Sum,
            "min" => Self::Min,
            "max" => Self::Max,
            "median" => Self::Median,
            "std" => Self::Std,
            "first" => Self::First,
            "last" => Self::Last,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostMap {
    Magnitude,
    Power,
    LogPower,
}

impl PostMap {
    pub fn as_str(self) -> &'static str {
        match self {
            PostMap::Magnitude => "magnitude",
            PostMap::Power => "power",
            PostMap::LogPower => "log-power",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "magnitude" => Some(Self::Magnitude),
            "power" => Some(Self::Power),
            "log-power" => Some(Self::LogPower),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatDomain {
    Time,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentStat {
    Mean,
    Max,
    Min,
    Rms,
    Var,
    Std,
    Skewness,
    Kurtosis,
    Energy,
    PeakFactor,
    Range,
}

impl SegmentStat {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentStat::Mean => "mean",
            SegmentStat::Max => "max",
            SegmentStat::Min => "min",
            SegmentStat::Rms => "rms",
            SegmentStat::Var => "var",
            SegmentStat::Std => "std",
            SegmentStat::Skewness => "skewness",
            SegmentStat::Kurtosis => "kurtosis",
            SegmentStat::Energy => "energy",
            SegmentStat::PeakFactor => "peak_factor",
            SegmentStat::Range => "range",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mean" => Self::Mean,
            "max" => Self::Max,
            "min" => Self::Min,
            "rms" => Self::Rms,
            "var" => Self::Var,
            "std" => Self::Std,
            "skewness" => Self::Skewness,
            "kurtosis" => Self::Kurtosis,
            "energy" => Self::Energy,
            "peak_factor" => Self::PeakFactor,
            "range" => Self::Range,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeMode {
    Zero,
    Mean,
    Locf,
    Linear,
}

impl ImputeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ImputeMode::Zero => "zero",
            ImputeMode::Mean => "mean",
            ImputeMode::Locf => "locf",
            ImputeMode::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(Self::Zero),
            "mean" => Some(Self::Mean),
            "locf" => Some(Self::Locf),
            "linear" => Some(Self::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptMode {
    /// Each entry masked independently with the given probability.
    Point { ratio: f64 },
    /// Non-overlapping outages with lengths uniform in [min_len, max_len].
    Block { ratio: f64, min_len: usize, max_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitOn {
    Train,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitScope {
    #[default]
    Pooled,
    PerUnit,
}

/// The transform inventory.
#[derive(Debug, Clone, PartialEq)]
pub enum StageKind {
    Identity,
    MinMax,
    Standard,
    Constant {
        factor: f64,
    },
    WindowedAggregation {
        rule: AggregationRule,
        window: usize,
        stride: usize,
    },
    Stft {
        window: usize,
        stride: usize,
        n_fft: usize,
        post_map: PostMap,
    },
    SegmentStats {
        domain: StatDomain,
        stats: Vec<SegmentStat>,
    },
    CumSumSquared,
    Subsample {
        rate: usize,
    },
    Concatenate,
    PadToLength {
        length: usize,
        value: f64,
    },
    SelectChannels {
        channels: Vec<usize>,
    },
    Impute {
        mode: ImputeMode,
    },
    Corrupt {
        mode: CorruptMode,
        seed: u64,
    },
    HealthIndex {
        /// Explicit unit -> total lifetime table; units not listed fall back
        /// to the `lifetime_key` metadata entry.
        lifetimes: std::collections::BTreeMap<String, f64>,
        lifetime_key: String,
    },
    ConceptClasses {
        dataset_key: String,
    },
}

impl StageKind {
    pub fn name(&self) -> &'static str {
        match self {
            StageKind::Identity => "identity",
            StageKind::MinMax => "minmax",
            StageKind::Standard => "standard",
            StageKind::Constant { .. } => "constant",
            StageKind::WindowedAggregation { .. } => "windowed_aggregation",
            StageKind::Stft { .. } => "stft",
            StageKind::SegmentStats {
                domain: StatDomain::Time,
                ..
            } => "time_stats",
            StageKind::SegmentStats {
                domain: StatDomain::Frequency,
                ..
            } => "spectral_stats",
            StageKind::CumSumSquared => "cumsum_squared",
            StageKind::Subsample { .. } => "subsample",
            StageKind::Concatenate => "concatenate",
            StageKind::PadToLength { .. } => "pad_to_length",
            StageKind::SelectChannels { .. } => "select_channels",
            StageKind::Impute { .. } => "impute",
            StageKind::Corrupt { .. } => "mcar_corrupt",
            StageKind::HealthIndex { .. } => "health_index",
            StageKind::ConceptClasses { .. } => "concept_classes",
        }
    }

    /// Whether the stage estimates parameters from training data.
    pub fn is_stateful(&self) -> bool {
        matches!(
            self,
            StageKind::MinMax
                | StageKind::Standard
                | StageKind::Impute { mode: ImputeMode::Mean }
                | StageKind::ConceptClasses { .. }
        )
    }

    /// Whether the stage emits a new temporal grid.
    pub fn changes_grid(&self) -> bool {
        matches!(
            self,
            StageKind::WindowedAggregation { .. }
                | StageKind::Stft { .. }
                | StageKind::SegmentStats { .. }
                | StageKind::Subsample { .. }
                | StageKind::PadToLength { .. }
        )
    }

    /// Whether the inverse map exists (used to report metrics in physical units).
    pub fn is_invertible(&self) -> bool {
        matches!(
            self,
            StageKind::Identity
                | StageKind::MinMax
                | StageKind::Standard
                | StageKind::Constant { .. }
                | StageKind::HealthIndex { .. }
        )
    }

    fn multi_input(&self) -> bool {
        matches!(self, StageKind::Concatenate)
    }
}

/// One configured pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
    pub apply_to: Vec<String>,
    pub assign_to: String,
    pub fit_on: FitOn,
    pub cache_point: bool,
    pub fit_scope: FitScope,
    /// Target alignment for grid-changing stages writing the feature key.
    pub align: Option<AlignmentRule>,
}

impl StageSpec {
    /// A stage reading `apply_to` and writing the first key, fitted on train
    /// exactly when the kind is stateful.
    pub fn new(kind: StageKind, apply_to: &[&str]) -> Self {
        let fit_on = if kind.is_stateful() { FitOn::Train } else { FitOn::None };
        Self {
            name: kind.name().to_string(),
            assign_to: apply_to.first().map(|s| s.to_string()).unwrap_or_default(),
            apply_to: apply_to.iter().map(|s| s.to_string()).collect(),
            kind,
            fit_on,
            cache_point: false,
            fit_scope: FitScope::Pooled,
            align: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn assign_to(mut self, key: impl Into<String>) -> Self {
        self.assign_to = key.into();
        self
    }

    pub fn align(mut self, rule: AlignmentRule) -> Self {
        self.align = Some(rule);
        self
    }

    pub fn cache_point(mut self) -> Self {
        self.cache_point = true;
        self
    }

    pub fn per_unit(mut self) -> Self {
        self.fit_scope = FitScope::PerUnit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(format!("stage `{}`: {msg}", self.name)));
        if self.apply_to.is_empty() {
            return bad("apply_to must name at least one key".into());
        }
        if self.apply_to.len() > 1 && !self.kind.multi_input() {
            return bad(format!("{} takes exactly one input key", self.kind.name()));
        }
        if self.assign_to.is_empty() {
            return bad("assign_to must not be empty".into());
        }
        if self.kind.is_stateful() && self.fit_on != FitOn::Train {
            return bad(format!("{} is stateful and must set fit_on = train", self.kind.name()));
        }
        match &self.kind {
            StageKind::Constant { factor } if *factor == 0.0 || !factor.is_finite() => {
                return bad("constant factor must be finite and non-zero".into())
            }
            StageKind::WindowedAggregation { window, stride, .. } if *window == 0 || *stride == 0 => {
                return bad("window and stride must be >= 1".into())
            }
            StageKind::Stft {
                window, stride, n_fft, ..
            } => {
                if *window == 0 || *stride == 0 {
                    return bad("window and stride must be >= 1".into());
                }
                if window > n_fft {
                    return bad(format!("window {window} exceeds n_fft {n_fft}"));
                }
            }
            StageKind::SegmentStats { stats, .. } if stats.is_empty() => return bad("stats must not be empty".into()),
            StageKind::Subsample { rate } if *rate == 0 => return bad("rate must be >= 1".into()),
            StageKind::SelectChannels { channels } if channels.is_empty() => {
                return bad("channels must not be empty".into())
            }
            StageKind::Corrupt { mode, .. } => {
                let ratio = match mode {
                    CorruptMode::Point { ratio } => *ratio,
                    CorruptMode::Block {
                        ratio,
                        min_len,
                        max_len,
                    } => {
                        if *min_len == 0 || min_len > max_len {
                            return bad("block lengths must satisfy 1 <= min_len <= max_len".into());
                        }
                        *ratio
                    }
                };
                if !(0.0..=1.0).contains(&ratio) {
                    return bad(format!("ratio {ratio} outside [0, 1]"));
                }
            }
            StageKind::HealthIndex { lifetimes, .. } => {
                if let Some((u, l)) = lifetimes.iter().find(|(_, l)| !(**l > 0.0 && l.is_finite())) {
                    return bad(format!("lifetime of {u} must be > 0, got {l}"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The canonical configuration form of the stage, as hashed into cache
    /// keys and written to resolved configs.
    pub fn to_config_value(&self) -> Result<Value> {
        let finite = |v: f64, what: &str| -> Result<Value> {
            if v.is_finite() {
                Ok(json!(v))
            } else {
                Err(Error::Canonicalization(format!(
                    "stage `{}`: {what} is not finite",
                    self.name
                )))
            }
        };
        let mut m = Map::new();
        m.insert("name".into(), json!(self.name));
        m.insert("kind".into(), json!(self.kind.name()));
        m.insert("apply_to".into(), json!(self.apply_to));
        m.insert("assign_to".into(), json!(self.assign_to));
        m.insert(
            "fit_on".into(),
            match self.fit_on {
                FitOn::Train => json!("train"),
                FitOn::None => Value::Null,
            },
        );
        m.insert("cache_point".into(), json!(self.cache_point));
        m.insert(
            "fit_scope".into(),
            json!(match self.fit_scope {
                FitScope::Pooled => "pooled",
                FitScope::PerUnit => "per-unit",
            }),
        );
        if self.kind.changes_grid() {
            m.insert("align".into(), self.align.map_or(Value::Null, |a| json!(a.as_str())));
        }
        match &self.kind {
            StageKind::Identity
            | StageKind::MinMax
            | StageKind::Standard
            | StageKind::CumSumSquared
            | StageKind::Concatenate => {}
            StageKind::Constant { factor } => {
                m.insert("factor".into(), finite(*factor, "factor")?);
            }
            StageKind::WindowedAggregation { rule, window, stride } => {
                m.insert("rule".into(), json!(rule.as_str()));
                m.insert("window".into(), json!(window));
                m.insert("stride".into(), json!(stride));
            }
            StageKind::Stft {
                window,
                stride,
                n_fft,
                post_map,
            } => {
                m.insert("window".into(), json!(window));
                m.insert("stride".into(), json!(stride));
                m.insert("n_fft".into(), json!(n_fft));
                m.insert("post_map".into(), json!(post_map.as_str()));
            }
            StageKind::SegmentStats { stats, .. } => {
                m.insert(
                    "stats".into(),
                    json!(stats.iter().map(|s| s.as_str()).collect::<Vec<_>>()),
                );
            }
            StageKind::Subsample { rate } => {
                m.insert("rate".into(), json!(rate));
            }
            StageKind::PadToLength { length, value } => {
                m.insert("length".into(), json!(length));
                m.insert("value".into(), finite(*value, "pad value")?);
            }
            StageKind::SelectChannels { channels } => {
                m.insert("channels".into(), json!(channels));
            }
            StageKind::Impute { mode } => {
                m.insert("mode".into(), json!(mode.as_str()));
            }
            StageKind::Corrupt { mode, seed } => {
                match mode {
                    CorruptMode::Point { ratio } => {
                        m.insert("mode".into(), json!("point"));
                        m.insert("ratio".into(), finite(*ratio, "ratio")?);
                    }
                    CorruptMode::Block {
                        ratio,
                        min_len,
                        max_len,
                    } => {
                        m.insert("mode".into(), json!("block"));
                        m.insert("ratio".into(), finite(*ratio, "ratio")?);
                        m.insert("min_len".into(), json!(min_len));
                        m.insert("max_len".into(), json!(max_len));
                    }
                }
                m.insert("seed".into(), json!(seed));
            }
            StageKind::HealthIndex {
                lifetimes,
                lifetime_key,
            } => {
                let mut table = Map::new();
                for (unit, l) in lifetimes {
                    table.insert(unit.clone(), finite(*l, "lifetime")?);
                }
                m.insert("lifetimes".into(), Value::Object(table));
                m.insert("lifetime_key".into(), json!(lifetime_key));
            }
            StageKind::ConceptClasses { dataset_key } => {
                m.insert("dataset_key".into(), json!(dataset_key));
            }
        }
        Ok(Value::Object(m))
    }
}

/// Population mean and standard deviation, summed in slice order.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
