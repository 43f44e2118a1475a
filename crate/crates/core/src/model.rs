//! Shared domain types: raw trajectories, transformed series with their
//! raw-time support, split assignments and the split container that carries
//! them through the pipeline.
//!
//! All floats are `f64`; missing values are quiet NaN. Unit identities are
//! opaque strings ordered bytewise, and every collection keyed by unit uses
//! that order so reductions are reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Container key holding the model input features.
pub const FEATURES_KEY: &str = "features";
/// Container key holding the supervision target.
pub const TARGET_KEY: &str = "target";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense row-major matrix; rows are time steps, columns are channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-channel matrix from a series.
    pub fn column_vector(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Builds a matrix from per-channel columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("columns differ in length".into()));
        }
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * cols + j] = *v;
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    /// Bitwise equality, treating NaNs with identical payloads as equal.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// One monitored unit's raw trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RawUnit {
    pub unit_id: String,
    /// T x M raw sensor values.
    pub features: Matrix,
    /// Length-T task target (RUL, health index or integer class codes).
    pub target: Vec<f64>,
    pub channel_names: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl RawUnit {
    pub fn new(
        unit_id: impl Into<String>,
        features: Matrix,
        target: Vec<f64>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let unit = Self {
            unit_id: unit_id.into(),
            features,
            target,
            channel_names,
            metadata: BTreeMap::new(),
        };
        unit.check()?;
        Ok(unit)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    fn check(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::Integrity(format!("unit {} has no samples", self.unit_id)));
        }
        if self.features.rows() != self.target.len() {
            return Err(Error::Integrity(format!(
                "unit {}: {} feature rows but {} targets",
                self.unit_id,
                self.features.rows(),
                self.target.len()
            )));
        }
        if self.channel_names.len() != self.features.cols() {
            return Err(Error::Integrity(format!(
                "unit {}: {} channel names for {} channels",
                self.unit_id,
                self.channel_names.len(),
                self.features.cols()
            )));
        }
        Ok(())
    }
}

/// Raw-time support of one transformed index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Support {
    /// A single 1-based raw index.
    Point(usize),
    /// An inclusive raw-index interval.
    Span { lo: usize, hi: usize },
    /// A padded index with no raw evidence behind it.
    Artificial,
}

impl Support {
    pub fn bounds(&self) -> Option<(usize, usize)> {
        match *self {
            Support::Point(i) => Some((i, i)),
            Support::Span { lo, hi } => Some((lo, hi)),
            Support::Artificial => None,
        }
    }

    pub fn lo(&self) -> Option<usize> {
        self.bounds().map(|b| b.0)
    }

    pub fn hi(&self) -> Option<usize> {
        self.bounds().map(|b| b.1)
    }
}

/// The support a(j) of every transformed index j = 1..T'.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SupportMap(Vec<Support>);

impl SupportMap {
    pub fn new(entries: Vec<Support>) -> Self {
        Self(entries)
    }

    /// Timestamp support 1..=len, as carried by raw series.
    pub fn identity(len: usize) -> Self {
        Self((1..=len).map(Support::Point).collect())
    }

    /// Interval supports [(j-1)s+1, (j-1)s+w] for the interior sliding stages.
    pub fn sliding(len: usize, width: usize, step: usize) -> Self {
        let count = if width >= 1 && step >= 1 && len >= width {
            (len - width) / step + 1
        } else {
            0
        };
        Self(
            (0..count)
                .map(|j| Support::Span {
                    lo: j * step + 1,
                    hi: j * step + width,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[Support] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> Option<&Support> {
        self.0.get(j)
    }

    /// Largest raw index referenced by the first `count` entries.
    pub fn raw_hi_through(&self, count: usize) -> usize {
        self.0.iter().take(count).filter_map(Support::hi).max().unwrap_or(0)
    }

    /// Maps stage-local supports (indices into this map's grid) back to raw
    /// time. Intervals become the union span [min lo, max hi] of the entries
    /// they cover.
    pub fn compose(&self, local: &SupportMap) -> Result<SupportMap> {
        let mut out = Vec::with_capacity(local.len());
        for entry in local.entries() {
            let composed = match *entry {
                Support::Artificial => Support::Artificial,
                Support::Point(i) => *self.index(i)?,
                Support::Span { lo, hi } => {
                    if lo > hi {
                        return Err(Error::Alignment(format!("empty support interval [{lo}, {hi}]")));
                    }
                    let mut span: Option<(usize, usize)> = None;
                    for i in lo..=hi {
                        if let Some((a, b)) = self.index(i)?.bounds() {
                            span = Some(match span {
                                None => (a, b),
                                Some((x, y)) => (x.min(a), y.max(b)),
                            });
                        }
                    }
                    match span {
                        None => Support::Artificial,
                        Some((a, b)) if a == b && lo == hi => Support::Point(a),
                        Some((a, b)) => Support::Span { lo: a, hi: b },
                    }
                }
            };
            out.push(composed);
        }
        Ok(SupportMap(out))
    }

    fn index(&self, i: usize) -> Result<&Support> {
        if i == 0 {
            return Err(Error::Alignment("support indices are 1-based".into()));
        }
        self.0
            .get(i - 1)
            .ok_or_else(|| Error::Alignment(format!("support index {i} outside grid of length {}", self.len())))
    }

    /// Checks the structural invariants against a raw length, returning
    /// human-readable problems.
    pub fn problems(&self, raw_len: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut prev_lo = 0;
        for (j, entry) in self.0.iter().enumerate() {
            if let Some((lo, hi)) = entry.bounds() {
                if lo == 0 || hi > raw_len {
                    out.push(format!("support entry {} [{lo}, {hi}] outside [1, {raw_len}]", j + 1));
                }
                if lo > hi {
                    out.push(format!("support entry {} has lo > hi", j + 1));
                }
                if lo < prev_lo {
                    out.push(format!("support entry {} breaks sorted order", j + 1));
                }
                prev_lo = lo;
            }
        }
        out
    }
}

/// A keyed array inside a unit frame: values plus their raw-time support.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Matrix,
    pub support: SupportMap,
}

impl Series {
    pub fn new(values: Matrix, support: SupportMap) -> Result<Self> {
        if values.rows() != support.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} support entries",
                values.rows(),
                support.len()
            )));
        }
        Ok(Self { values, support })
    }

    /// Series on the raw grid of a length-`rows` trajectory.
    pub fn raw(values: Matrix) -> Self {
        let support = SupportMap::identity(values.rows());
        Self { values, support }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Transformed features Z, aligned targets Y' and the raw support of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    pub unit_id: String,
    pub features: Matrix,
    pub targets: Vec<f64>,
    pub support: SupportMap,
}

impl AlignedSeries {
    pub fn new(unit_id: impl Into<String>, features: Matrix, targets: Vec<f64>, support: SupportMap) -> Result<Self> {
        let series = Self {
            unit_id: unit_id.into(),
            features,
            targets,
            support,
        };
        if let Some(problem) = series.length_problem() {
            return Err(Error::Shape(problem));
        }
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    fn length_problem(&self) -> Option<String> {
        let (z, y, a) = (self.features.rows(), self.targets.len(), self.support.len());
        if z != y || y != a {
            Some(format!(
                "length mismatch for unit {}: rows(Z)={z}, len(Y')={y}, len(support)={a}",
                self.unit_id
            ))
        } else if z > 0 && self.features.cols() == 0 {
            Some(format!("unit {} has rows but no feature channels", self.unit_id))
        } else {
            None
        }
    }
}

/// Chronological boundaries of one unit under intra-unit splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntraBounds {
    /// Last transformed index belonging to train.
    pub tau_train: usize,
    /// Last transformed index belonging to val.
    pub tau_val: usize,
    /// Transformed length T'_u the boundaries refer to.
    pub t_prime: usize,
    /// Largest raw index a train-only fit may consume for this unit.
    pub raw_train_limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitAssignment {
    InterUnit(BTreeMap<String, SplitTag>),
    IntraUnit(BTreeMap<String, IntraBounds>),
}

impl SplitAssignment {
    /// Builds an inter-unit assignment from three unit lists, rejecting overlaps.
    pub fn inter(train: &[&str], val: &[&str], test: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (tag, units) in [(SplitTag::Train, train), (SplitTag::Val, val), (SplitTag::Test, test)] {
            for unit in units {
                if let Some(prev) = map.insert(unit.to_string(), tag) {
                    return Err(Error::Integrity(format!(
                        "unit {unit} assigned to both {prev} and {tag}"
                    )));
                }
            }
        }
        Ok(SplitAssignment::InterUnit(map))
    }

    pub fn is_intra(&self) -> bool {
        matches!(self, SplitAssignment::IntraUnit(_))
    }

    pub fn units(&self) -> Vec<&str> {
        match self {
            SplitAssignment::InterUnit(m) => m.keys().map(String::as_str).collect(),
            SplitAssignment::IntraUnit(m) => m.keys().map(String::as_str).collect(),
        }
    }

    pub fn intra_bounds(&self, unit: &str) -> Option<&IntraBounds> {
        match self {
            SplitAssignment::IntraUnit(m) => m.get(unit),
            SplitAssignment::InterUnit(_) => None,
        }
    }
}

/// One unit's keyed arrays as they move through the transform pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFrame {
    pub unit_id: String,
    /// Length of the raw trajectory the supports refer to.
    pub raw_len: usize,
    pub arrays: BTreeMap<String, Series>,
    pub metadata: BTreeMap<String, String>,
}

impl UnitFrame {
    pub fn from_raw(unit: &RawUnit) -> Self {
        let mut arrays = BTreeMap::new();
        arrays.insert(FEATURES_KEY.to_string(), Series::raw(unit.features.clone()));
        arrays.insert(
            TARGET_KEY.to_string(),
            Series::raw(Matrix::column_vector(unit.target.clone())),
        );
        Self {
            unit_id: unit.unit_id.clone(),
            raw_len: unit.len(),
            arrays,
            metadata: unit.metadata.clone(),
        }
    }

    pub fn array(&self, key: &str) -> Result<&Series> {
        self.arrays
            .get(key)
            .ok_or_else(|| Error::Configuration(format!("unit {} has no container key `{key}`", self.unit_id)))
    }

    /// Extracts the aligned (features, target) pair.
    pub fn aligned(&self) -> Result<AlignedSeries> {
        let features = self.array(FEATURES_KEY)?;
        let target = self.array(TARGET_KEY)?;
        if target.values.cols() != 1 {
            return Err(Error::Shape(format!(
                "unit {}: target must be a single channel, found {}",
                self.unit_id,
                target.values.cols()
            )));
        }
        if features.support != target.support {
            return Err(Error::Alignment(format!(
                "unit {}: features and target live on different grids ({} vs {} entries)",
                self.unit_id,
                features.len(),
                target.len()
            )));
        }
        AlignedSeries::new(
            self.unit_id.clone(),
            features.values.clone(),
            target.values.column(0),
            features.support.clone(),
        )
    }
}

/// Per-split unit frames, the assignment that produced them and the ordered
/// stage history applied to each split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitContainer {
    pub assignment: SplitAssignment,
    pub splits: BTreeMap<SplitTag, Vec<UnitFrame>>,
    pub history: BTreeMap<SplitTag, Vec<String>>,
}

impl SplitContainer {
    /// Assembles a container; frames are sorted by unit id so that layout
    /// never depends on insertion order.
    pub fn new(assignment: SplitAssignment, splits: BTreeMap<SplitTag, Vec<UnitFrame>>) -> Self {
        let mut splits = splits;
        for tag in SplitTag::ALL {
            splits.entry(tag).or_default();
        }
        for frames in splits.values_mut() {
            frames.sort_by(|a, b| a.unit_id.as_bytes().cmp(b.unit_id.as_bytes()));
        }
        let history = SplitTag::ALL.iter().map(|t| (*t, Vec::new())).collect();
        Self {
            assignment,
            splits,
            history,
        }
    }

    /// Places raw units according to the assignment. Under intra-unit
    /// splitting a unit is placed in every split whose range is non-empty.
    pub fn from_raw(units: &[RawUnit], assignment: SplitAssignment) -> Result<Self> {
        let mut splits: BTreeMap<SplitTag, Vec<UnitFrame>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for unit in units {
            if !seen.insert(unit.unit_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate unit id {}", unit.unit_id)));
            }
            let frame = UnitFrame::from_raw(unit);
            match &assignment {
                SplitAssignment::InterUnit(map) => {
                    let tag = map.get(&unit.unit_id).ok_or_else(|| {
                        Error::Routing(format!("unit {} missing from split assignment", unit.unit_id))
                    })?;
                    splits.entry(*tag).or_default().push(frame);
                }
                SplitAssignment::IntraUnit(map) => {
                    let b = map.get(&unit.unit_id).ok_or_else(|| {
                        Error::Routing(format!("unit {} missing from split assignment", unit.unit_id))
                    })?;
                    for (tag, non_empty) in [
                        (SplitTag::Train, b.tau_train >= 1),
                        (SplitTag::Val, b.tau_val > b.tau_train),
                        (SplitTag::Test, b.t_prime > b.tau_val),
                    ] {
                        if non_empty {
                            splits.entry(tag).or_default().push(frame.clone());
                        }
                    }
                }
            }
        }
        if let SplitAssignment::InterUnit(map) = &assignment {
            if let Some(missing) = map.keys().find(|u| !seen.contains(u.as_str())) {
                return Err(Error::Integrity(format!(
                    "split assignment names unit {missing} which was not loaded"
                )));
            }
        }
        Ok(Self::new(assignment, splits))
    }

    pub fn split(&self, tag: SplitTag) -> &[UnitFrame] {
        self.splits.get(&tag).map_or(&[], Vec::as_slice)
    }

    /// Every distinct unit in the container, one frame each, in unit order.
    pub fn unique_frames(&self) -> Vec<&UnitFrame> {
        let mut by_id: BTreeMap<&str, &UnitFrame> = BTreeMap::new();
        for tag in SplitTag::ALL {
            for frame in self.split(tag) {
                by_id.entry(frame.unit_id.as_str()).or_insert(frame);
            }
        }
        by_id.into_values().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    UnitInMultipleSplits,
    AssignmentMismatch,
    LengthMismatch,
    SupportOutOfRange,
    HistoryDivergence,
    BoundaryOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

/// Lists every structural invariant the container breaks. Never mutates;
/// an empty report means the container is well formed.
pub fn validate_container(container: &SplitContainer) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, message: String| out.push(Violation { kind, message });

    let mut placements: BTreeMap<&str, Vec<SplitTag>> = BTreeMap::new();
    for (tag, frames) in &container.splits {
        for frame in frames {
            placements.entry(frame.unit_id.as_str()).or_default().push(*tag);
        }
    }

    match &container.assignment {
        SplitAssignment::InterUnit(map) => {
            for (unit, tags) in &placements {
                if tags.len() > 1 {
                    push(
                        ViolationKind::UnitInMultipleSplits,
                        format!("unit in multiple splits: {unit} in {tags:?}"),
                    );
                }
                match map.get(*unit) {
                    None => push(
                        ViolationKind::AssignmentMismatch,
                        format!("unit {unit} is not in the split assignment"),
                    ),
                    Some(expected) if !tags.contains(expected) => push(
                        ViolationKind::AssignmentMismatch,
                        format!("unit {unit} assigned to {expected} but stored in {tags:?}"),
                    ),
                    _ => {}
                }
            }
        }
        SplitAssignment::IntraUnit(map) => {
            for (unit, b) in map {
                if !(b.tau_train <= b.tau_val && b.tau_val <= b.t_prime) {
                    push(
                        ViolationKind::BoundaryOrder,
                        format!(
                            "unit {unit}: boundaries must satisfy 0 <= tau_train <= tau_val <= T' (got {}, {}, {})",
                            b.tau_train, b.tau_val, b.t_prime
                        ),
                    );
                }
            }
            for (unit, tags) in &placements {
                let mut dedup = tags.clone();
                dedup.dedup();
                if dedup.len() != tags.len() {
                    push(
                        ViolationKind::UnitInMultipleSplits,
                        format!("unit {unit} stored twice in one split"),
                    );
                }
                if !map.contains_key(*unit) {
                    push(
                        ViolationKind::AssignmentMismatch,
                        format!("unit {unit} is not in the split assignment"),
                    );
                }
            }
        }
    }

    for (tag, frames) in &container.splits {
        for frame in frames {
            for (key, series) in &frame.arrays {
                if series.values.rows() != series.support.len() {
                    push(
                        ViolationKind::LengthMismatch,
                        format!(
                            "length mismatch in {tag}/{}/{key}: {} rows, {} support entries",
                            frame.unit_id,
                            series.values.rows(),
                            series.support.len()
                        ),
                    );
                }
                for problem in series.support.problems(frame.raw_len) {
                    push(
                        ViolationKind::SupportOutOfRange,
                        format!("{tag}/{}/{key}: {problem}", frame.unit_id),
                    );
                }
            }
            if let (Some(f), Some(t)) = (frame.arrays.get(FEATURES_KEY), frame.arrays.get(TARGET_KEY)) {
                if f.values.rows() != t.values.rows() {
                    push(
                        ViolationKind::LengthMismatch,
                        format!(
                            "length mismatch in {tag}/{}: rows(Z)={}, len(Y')={}",
                            frame.unit_id,
                            f.values.rows(),
                            t.values.rows()
                        ),
                    );
                }
            }
        }
    }

    let mut histories = container.history.values();
    if let Some(first) = histories.next() {
        if histories.any(|h| h != first) {
            push(
                ViolationKind::HistoryDivergence,
                "stage history differs across splits".to_string(),
            );
        }
    }
    out
}
