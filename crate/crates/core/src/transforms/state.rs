use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::{mean_std, FitOn, FitScope, ImputeMode, StageKind, StageSpec};
use crate::error::{Error, Result};
use crate::model::{Matrix, SplitContainer, SplitTag};

/// Parameters estimated by one stage, stamped with the partition they came
/// from and a digest of their canonical byte form.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTransformState {
    pub stage_name: String,
    pub params: BTreeMap<String, Vec<f64>>,
    pub fitted_on: SplitTag,
    pub fingerprint: [u8; 32],
}

impl FittedTransformState {
    pub fn new(stage_name: impl Into<String>, params: BTreeMap<String, Vec<f64>>) -> Self {
        let fingerprint = Self::digest(&params);
        Self {
            stage_name: stage_name.into(),
            params,
            fitted_on: SplitTag::Train,
            fingerprint,
        }
    }

    /// State of a stateless stage.
    pub fn empty(stage_name: impl Into<String>) -> Self {
        Self::new(stage_name, BTreeMap::new())
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Digest over the params in key order: per entry the key length and
    /// bytes, the value count and each value's little-endian bit pattern.
    pub fn digest(params: &BTreeMap<String, Vec<f64>>) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, values) in params {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((values.len() as u64).to_le_bytes());
            for v in values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Whether the stored fingerprint still matches the params.
    pub fn verify(&self) -> bool {
        Self::digest(&self.params) == self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    pub fn param(&self, name: &str) -> Result<&[f64]> {
        self.params
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("stage `{}` has no fitted parameter `{name}`", self.stage_name)))
    }

    /// Pooled parameter or, for per-unit fits, the unit's own entry.
    pub(crate) fn scoped(&self, name: &str, unit: &str, scope: FitScope) -> Result<&[f64]> {
        match scope {
            FitScope::Pooled => self.param(name),
            FitScope::PerUnit => self
                .param(&scoped_name(unit, name))
                .map_err(|_| Error::Lookup(format!("stage `{}` was not fitted on unit {unit}", self.stage_name))),
        }
    }
}

pub(crate) fn scoped_name(unit: &str, name: &str) -> String {
    format!("unit:{unit}/{name}")
}

/// One unit's training rows for a stage input.
#[derive(Debug, Clone, PartialEq)]
pub struct FitUnit {
    pub unit_id: String,
    pub values: Matrix,
    pub metadata: BTreeMap<String, String>,
    /// Largest raw index any of the rows depends on.
    pub raw_hi: usize,
}

/// Data offered to a fit, carrying the split it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    tag: SplitTag,
    units: Vec<FitUnit>,
}

impl FitData {
    pub fn new(tag: SplitTag, mut units: Vec<FitUnit>) -> Self {
        units.sort_by(|a, b| a.unit_id.as_bytes().cmp(b.unit_id.as_bytes()));
        Self { tag, units }
    }

    pub fn tag(&self) -> SplitTag {
        self.tag
    }

    pub fn units(&self) -> &[FitUnit] {
        &self.units
    }

    /// Draws the rows of `key` from one split. For the intra-unit train split
    /// only rows whose raw support ends at or before the unit's training
    /// limit are kept; padded rows never enter a fit.
    pub fn from_container(container: &SplitContainer, tag: SplitTag, key: &str) -> Result<Self> {
        let mut units = Vec::new();
        for frame in container.split(tag) {
            let series = frame.array(key)?;
            let limit = match (tag, container.assignment.intra_bounds(&frame.unit_id)) {
                (SplitTag::Train, Some(b)) => Some(b.raw_train_limit),
                _ => None,
            };
            let mut rows = Vec::new();
            let mut raw_hi = 0;
            for (i, support) in series.support.entries().iter().enumerate() {
                let Some(hi) = support.hi() else { continue };
                if limit.is_some_and(|l| hi > l) {
                    continue;
                }
                rows.push(i);
                raw_hi = raw_hi.max(hi);
            }
            units.push(FitUnit {
                unit_id: frame.unit_id.clone(),
                values: series.values.select_rows(&rows),
                metadata: frame.metadata.clone(),
                raw_hi,
            });
        }
        Ok(Self::new(tag, units))
    }

    pub fn consumed_raw_hi(&self) -> BTreeMap<String, usize> {
        self.units.iter().map(|u| (u.unit_id.clone(), u.raw_hi)).collect()
    }

    fn total_rows(&self) -> usize {
        self.units.iter().map(|u| u.values.rows()).sum()
    }
}

/// Estimates a stage's parameters. Only training data is accepted; anything
/// else is a leakage fault regardless of the stage kind.
pub fn fit_stage(spec: &StageSpec, data: &FitData) -> Result<FittedTransformState> {
    if data.tag() != SplitTag::Train {
        return Err(Error::Leakage(format!(
            "stage `{}` was offered {} data for fitting; only train may be used",
            spec.name,
            data.tag()
        )));
    }
    if !spec.kind.is_stateful() {
        return Ok(FittedTransformState::empty(&spec.name));
    }
    if spec.fit_on != FitOn::Train {
        return Err(Error::Spec(format!(
            "stage `{}` is stateful and must set fit_on = train",
            spec.name
        )));
    }
    if data.units().is_empty() || data.total_rows() == 0 {
        return Err(Error::Fit(format!(
            "stage `{}` has no training rows to fit on",
            spec.name
        )));
    }

    let mut params = BTreeMap::new();
    if let StageKind::ConceptClasses { dataset_key } = &spec.kind {
        let ids: BTreeSet<&str> = data
            .units()
            .iter()
            .map(|u| {
                u.metadata
                    .get(dataset_key)
                    .map(String::as_str)
                    .ok_or_else(|| Error::Fit(format!("unit {} has no `{dataset_key}` metadata", u.unit_id)))
            })
            .collect::<Result<_>>()?;
        for (code, id) in ids.into_iter().enumerate() {
            params.insert(format!("dataset:{id}"), vec![(code + 1) as f64]);
        }
        return Ok(FittedTransformState::new(&spec.name, params));
    }

    let width = data.units()[0].values.cols();
    if data.units().iter().any(|u| u.values.cols() != width) {
        return Err(Error::Fit(format!(
            "stage `{}`: training units disagree on channel count",
            spec.name
        )));
    }
    match spec.fit_scope {
        FitScope::Pooled => {
            let views: Vec<&Matrix> = data.units().iter().map(|u| &u.values).collect();
            for (name, values) in channel_params(&spec.kind, &views, width, &spec.name)? {
                params.insert(name, values);
            }
        }
        FitScope::PerUnit => {
            for unit in data.units() {
                if unit.values.rows() == 0 {
                    continue;
                }
                for (name, values) in channel_params(&spec.kind, &[&unit.values], width, &spec.name)? {
                    params.insert(scoped_name(&unit.unit_id, &name), values);
                }
            }
        }
    }
    Ok(FittedTransformState::new(&spec.name, params))
}

/// Per-channel statistics over the given matrices, visited in order.
fn channel_params(kind: &StageKind, parts: &[&Matrix], width: usize, stage: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let column = |c: usize| -> Vec<f64> {
        parts
            .iter()
            .flat_map(|m| (0..m.rows()).map(move |i| m.get(i, c)))
            .filter(|v| !v.is_nan())
            .collect()
    };
    let empty = |c: usize| Error::Fit(format!("stage `{stage}`: channel {c} has no observed training values"));
    match kind {
        StageKind::MinMax => {
            let (mut lo, mut hi) = (Vec::with_capacity(width), Vec::with_capacity(width));
            for c in 0..width {
                let col = column(c);
                if col.is_empty() {
                    return Err(empty(c));
                }
                lo.push(col.iter().copied().fold(f64::INFINITY, f64::min));
                hi.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
            Ok(vec![("min".into(), lo), ("max".into(), hi)])
        }
        StageKind::Standard => {
            let (mut mu, mut sigma) = (Vec::with_capacity(width), Vec::with_capacity(width));
            for c in 0..width {
                let col = column(c);
                if col.is_empty() {
                    return Err(empty(c));
                }
                let (m, s) = mean_std(&col);
                mu.push(m);
                sigma.push(s);
            }
            Ok(vec![("mean".into(), mu), ("std".into(), sigma)])
        }
        StageKind::Impute { mode: ImputeMode::Mean } => {
            let mut mu = Vec::with_capacity(width);
            for c in 0..width {
                let col = column(c);
                if col.is_empty() {
                    return Err(empty(c));
                }
                mu.push(mean_std(&col).0);
            }
            Ok(vec![("mean".into(), mu)])
        }
        other => Err(Error::Fit(format!("{} has no fit", other.name()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(tag: SplitTag, values: &[f64]) -> FitData {
        FitData::new(
            tag,
            vec![FitUnit {
                unit_id: "u".into(),
                values: Matrix::column_vector(values.to_vec()),
                metadata: BTreeMap::new(),
                raw_hi: values.len(),
            }],
        )
    }

    #[test]
    fn minmax_state_holds_extremes() {
        let spec = StageSpec::new(StageKind::MinMax, &["features"]);
        let s = fit_stage(&spec, &data(SplitTag::Train, &[2.0, 4.0, 10.0])).unwrap();
        assert_eq!(s.param("min").unwrap(), &[2.0]);
        assert_eq!(s.param("max").unwrap(), &[10.0]);
        assert_eq!(s.fitted_on, SplitTag::Train);
        assert!(s.verify());
    }

    #[test]
    fn non_train_data_is_a_leakage_fault() {
        for kind in [StageKind::MinMax, StageKind::Identity] {
            let spec = StageSpec::new(kind, &["features"]);
            for tag in [SplitTag::Val, SplitTag::Test] {
                let err = fit_stage(&spec, &data(tag, &[1.0])).unwrap_err();
                assert!(err.is_leakage());
            }
        }
    }

    #[test]
    fn identity_state_is_empty_and_stable() {
        let spec = StageSpec::new(StageKind::Identity, &["features"]);
        let a = fit_stage(&spec, &data(SplitTag::Train, &[1.0])).unwrap();
        let b = fit_stage(&spec, &data(SplitTag::Train, &[7.0])).unwrap();
        assert!(a.is_empty());
        assert_eq!(a.fingerprint, b.fingerprint);
    }

    #[test]
    fn empty_train_partition_is_a_fit_error() {
        let spec = StageSpec::new(StageKind::Standard, &["features"]);
        let err = fit_stage(&spec, &FitData::new(SplitTag::Train, vec![])).unwrap_err();
        assert!(matches!(err, Error::Fit(_)));
    }

    #[test]
    fn unit_order_does_not_change_the_fit() {
        let unit = |id: &str, v: Vec<f64>| FitUnit {
            unit_id: id.into(),
            values: Matrix::column_vector(v),
            metadata: BTreeMap::new(),
            raw_hi: 0,
        };
        let spec = StageSpec::new(StageKind::Standard, &["features"]);
        let a = FitData::new(
            SplitTag::Train,
            vec![unit("a", vec![0.1, 0.7]), unit("b", vec![1e9, 0.3])],
        );
        let b = FitData::new(
            SplitTag::Train,
            vec![unit("b", vec![1e9, 0.3]), unit("a", vec![0.1, 0.7])],
        );
        assert_eq!(
            fit_stage(&spec, &a).unwrap().fingerprint,
            fit_stage(&spec, &b).unwrap().fingerprint
        );
    }
}
