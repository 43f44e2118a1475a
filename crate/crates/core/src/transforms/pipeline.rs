use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::aggregate::{apply_cumsum_squared, apply_windowed_aggregation};
use super::align::align_target;
use super::domain::{apply_health_index, encode_concept_class, ConceptLookup, HealthIndexLookup};
use super::repair::{apply_corrupt, apply_repair, unit_seed};
use super::scale::{apply_pointwise_scale, ScaleParams};
use super::spectral::{apply_segment_stats, apply_stft};
use super::state::{fit_stage, FitData, FittedTransformState};
use super::structural::{apply_concatenate, apply_pad_to_length, apply_select_channels, apply_subsample};
use super::{Direction, ImputeMode, StageKind, StageSpec};
use crate::cache::canonical_bytes;
use crate::error::{Error, Result};
use crate::model::{
    Matrix, Series, SplitContainer, SplitTag, Support, SupportMap, UnitFrame, FEATURES_KEY, TARGET_KEY,
};

/// What one stateful fit consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub stage_index: usize,
    pub stage_name: String,
    pub fitted_on: SplitTag,
    /// Splits whose rows were read by the fit.
    pub consumed_splits: BTreeSet<SplitTag>,
    /// Largest raw index read per unit.
    pub consumed_raw_hi: BTreeMap<String, usize>,
    pub state_fingerprint: String,
}

/// Pipeline state after some prefix of the stages; this is what cache
/// points persist.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineCheckpoint {
    pub container: SplitContainer,
    /// One state per executed stage (empty for stateless stages).
    pub states: Vec<FittedTransformState>,
    pub fit_log: Vec<FitRecord>,
    pub notes: Vec<String>,
}

impl PipelineCheckpoint {
    pub fn start(container: SplitContainer) -> Self {
        Self {
            container,
            states: Vec::new(),
            fit_log: Vec::new(),
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub container: SplitContainer,
    pub states: Vec<FittedTransformState>,
    pub fit_log: Vec<FitRecord>,
    pub notes: Vec<String>,
    /// Per stage, how many times it ran in this invocation (0 when resumed past).
    pub stage_executions: Vec<usize>,
}

/// Fits and applies every stage in order.
pub fn run_pipeline(container: &SplitContainer, stages: &[StageSpec]) -> Result<PipelineRun> {
    resume_pipeline(PipelineCheckpoint::start(container.clone()), stages, 0, &mut |_, _| {
        Ok(())
    })
}

/// Continues from `checkpoint`, which must hold the result of stages
/// `0..start`. `after_stage` sees the checkpoint after each executed stage.
pub fn resume_pipeline(
    checkpoint: PipelineCheckpoint,
    stages: &[StageSpec],
    start: usize,
    after_stage: &mut dyn FnMut(usize, &PipelineCheckpoint) -> Result<()>,
) -> Result<PipelineRun> {
    if checkpoint.states.len() != start || start > stages.len() {
        return Err(Error::Contract(format!(
            "checkpoint holds {} stage states but resumption starts at stage {start}",
            checkpoint.states.len()
        )));
    }
    let mut cp = checkpoint;
    let mut executions = vec![0; stages.len()];
    for (idx, spec) in stages.iter().enumerate().skip(start) {
        execute_stage(&mut cp, idx, spec).map_err(|e| e.in_stage(format!("transform `{}`", spec.name)))?;
        executions[idx] += 1;
        after_stage(idx, &cp)?;
    }
    Ok(PipelineRun {
        container: cp.container,
        states: cp.states,
        fit_log: cp.fit_log,
        notes: cp.notes,
        stage_executions: executions,
    })
}

fn needs_target_alignment(spec: &StageSpec) -> bool {
    spec.kind.changes_grid() && spec.assign_to == FEATURES_KEY && !spec.apply_to.iter().any(|k| k == TARGET_KEY)
}

fn execute_stage(cp: &mut PipelineCheckpoint, idx: usize, spec: &StageSpec) -> Result<()> {
    spec.validate()?;
    if needs_target_alignment(spec) && spec.align.is_none() {
        return Err(Error::Configuration(format!(
            "stage `{}` changes the temporal grid of `{FEATURES_KEY}` but has no target alignment rule",
            spec.name
        )));
    }
    let state = if spec.kind.is_stateful() {
        let data = FitData::from_container(&cp.container, SplitTag::Train, &spec.apply_to[0])?;
        let state = fit_stage(spec, &data)?;
        cp.fit_log.push(FitRecord {
            stage_index: idx,
            stage_name: spec.name.clone(),
            fitted_on: state.fitted_on,
            consumed_splits: BTreeSet::from([data.tag()]),
            consumed_raw_hi: data.consumed_raw_hi(),
            state_fingerprint: state.fingerprint_hex(),
        });
        state
    } else {
        FittedTransformState::empty(&spec.name)
    };

    let mut next = BTreeMap::new();
    let mut shortfalls = BTreeSet::new();
    for (tag, frames) in &cp.container.splits {
        let mut out = Vec::with_capacity(frames.len());
        for frame in frames {
            out.push(apply_to_frame(spec, &state, frame, &mut shortfalls)?);
        }
        next.insert(*tag, out);
    }
    if !shortfalls.is_empty() {
        cp.notes.push(format!(
            "stage `{}`: block corruption fell short of the requested ratio for {:?}",
            spec.name, shortfalls
        ));
    }

    let mut h = Sha256::new();
    h.update(canonical_bytes(&spec.to_config_value()?)?);
    h.update(state.fingerprint);
    let entry = hex::encode(h.finalize());
    cp.container.splits = next;
    for history in cp.container.history.values_mut() {
        history.push(entry.clone());
    }
    cp.states.push(state);
    Ok(())
}

fn lifetime_lookup(
    lifetimes: &BTreeMap<String, f64>,
    lifetime_key: &str,
    unit_id: &str,
    metadata: &BTreeMap<String, String>,
) -> Result<HealthIndexLookup> {
    let life = match lifetimes.get(unit_id) {
        Some(l) => *l,
        None => {
            let raw = metadata
                .get(lifetime_key)
                .ok_or_else(|| Error::Lookup(format!("no lifetime known for unit {unit_id}")))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| Error::Lookup(format!("unit {unit_id}: lifetime `{raw}` is not a number")))?
        }
    };
    HealthIndexLookup::new(BTreeMap::from([(unit_id.to_string(), life)]))
}

fn apply_to_frame(
    spec: &StageSpec,
    state: &FittedTransformState,
    frame: &UnitFrame,
    shortfalls: &mut BTreeSet<String>,
) -> Result<UnitFrame> {
    let unit = frame.unit_id.as_str();
    let inputs = spec
        .apply_to
        .iter()
        .map(|k| frame.array(k))
        .collect::<Result<Vec<_>>>()?;
    let x = inputs[0];
    let (values, local): (Matrix, Option<SupportMap>) = match &spec.kind {
        StageKind::Identity => (x.values.clone(), None),
        StageKind::MinMax | StageKind::Standard | StageKind::Constant { .. } => {
            let params = ScaleParams::from_state(&spec.kind, state, unit, spec.fit_scope)?;
            (apply_pointwise_scale(&params, &x.values, Direction::Forward)?, None)
        }
        StageKind::WindowedAggregation { rule, window, stride } => {
            let (m, s) = apply_windowed_aggregation(*rule, *window, *stride, &x.values);
            (m, Some(s))
        }
        StageKind::Stft {
            window,
            stride,
            n_fft,
            post_map,
        } => {
            let (m, s) = apply_stft(*window, *stride, *n_fft, *post_map, &x.values)?;
            (m, Some(s))
        }
        StageKind::SegmentStats { domain, stats } => {
            let (m, s) = apply_segment_stats(*domain, stats, &x.values)?;
            (m, Some(s))
        }
        StageKind::CumSumSquared => (apply_cumsum_squared(&x.values), None),
        StageKind::Subsample { rate } => {
            let (m, s) = apply_subsample(*rate, &x.values)?;
            (m, Some(s))
        }
        StageKind::Concatenate => (apply_concatenate(&inputs)?.values, None),
        StageKind::PadToLength { length, value } => {
            let (m, s) = apply_pad_to_length(*length, *value, &x.values)?;
            (m, Some(s))
        }
        StageKind::SelectChannels { channels } => (apply_select_channels(channels, &x.values)?, None),
        StageKind::Impute { mode } => {
            let means = match mode {
                ImputeMode::Mean => Some(state.scoped("mean", unit, spec.fit_scope)?),
                _ => None,
            };
            (apply_repair(*mode, means, &x.values)?, None)
        }
        StageKind::Corrupt { mode, seed } => {
            let (m, report) = apply_corrupt(*mode, unit_seed(*seed, unit), &x.values)?;
            if report.shortfall {
                shortfalls.insert(unit.to_string());
            }
            (m, None)
        }
        StageKind::HealthIndex {
            lifetimes,
            lifetime_key,
        } => {
            let lookup = lifetime_lookup(lifetimes, lifetime_key, unit, &frame.metadata)?;
            let data = apply_health_index(&lookup, unit, x.values.data(), Direction::Forward)?;
            (Matrix::new(x.values.rows(), x.values.cols(), data)?, None)
        }
        StageKind::ConceptClasses { dataset_key } => {
            let lookup = ConceptLookup::from_state(state)?;
            let dataset = frame
                .metadata
                .get(dataset_key)
                .ok_or_else(|| Error::Lookup(format!("unit {unit} has no `{dataset_key}` metadata")))?;
            let codes = x
                .values
                .iter_rows()
                .map(|row| encode_concept_class(&lookup, row, dataset))
                .collect::<Result<Vec<_>>>()?;
            (Matrix::column_vector(codes), None)
        }
    };

    let support = match &local {
        Some(l) => x.support.compose(l)?,
        None => x.support.clone(),
    };
    let mut out = frame.clone();
    if needs_target_alignment(spec) {
        let local = local.as_ref().expect("grid-changing stages return local supports");
        let target = frame.array(TARGET_KEY)?;
        if target.support != x.support {
            return Err(Error::Alignment(format!(
                "unit {unit}: target grid differs from the grid of `{}`",
                spec.apply_to[0]
            )));
        }
        if target.values.cols() != 1 {
            return Err(Error::Shape(format!("unit {unit}: target must be a single channel")));
        }
        let rule = spec.align.expect("checked before execution");
        let aligned = align_target(&target.values.column(0), local, rule)?;
        out.arrays.insert(
            TARGET_KEY.to_string(),
            Series::new(Matrix::column_vector(aligned), support.clone())?,
        );
    }
    out.arrays.insert(spec.assign_to.clone(), Series::new(values, support)?);
    Ok(out)
}

fn local_support(kind: &StageKind, len: usize) -> Result<Option<SupportMap>> {
    Ok(match kind {
        StageKind::WindowedAggregation { window, stride, .. } => Some(SupportMap::sliding(len, *window, *stride)),
        StageKind::Stft { window, stride, .. } => {
            if len < *window {
                return Err(Error::Shape(format!(
                    "stft window {window} longer than series of length {len}"
                )));
            }
            Some(SupportMap::sliding(len, *window, *stride))
        }
        StageKind::SegmentStats { .. } => {
            if len == 0 {
                return Err(Error::Shape("segment statistics need at least one row".into()));
            }
            Some(SupportMap::new(vec![if len == 1 {
                Support::Point(1)
            } else {
                Support::Span { lo: 1, hi: len }
            }]))
        }
        StageKind::Subsample { rate } => Some(SupportMap::new((1..=len).step_by(*rate).map(Support::Point).collect())),
        StageKind::PadToLength { length, .. } => {
            if *length < len {
                return Err(Error::Shape(format!("cannot pad a series of length {len} to {length}")));
            }
            let mut s: Vec<Support> = (1..=len).map(Support::Point).collect();
            s.resize(*length, Support::Artificial);
            Some(SupportMap::new(s))
        }
        _ => None,
    })
}

/// The raw-time support the feature key will carry after the pipeline, for
/// a unit of raw length `raw_len`, computed without touching any values.
pub fn plan_feature_support(raw_len: usize, stages: &[StageSpec]) -> Result<SupportMap> {
    let mut grids: BTreeMap<String, SupportMap> = BTreeMap::new();
    grids.insert(FEATURES_KEY.into(), SupportMap::identity(raw_len));
    grids.insert(TARGET_KEY.into(), SupportMap::identity(raw_len));
    for spec in stages {
        spec.validate()?;
        let inputs = spec
            .apply_to
            .iter()
            .map(|k| {
                grids
                    .get(k)
                    .ok_or_else(|| Error::Configuration(format!("stage `{}` reads unknown key `{k}`", spec.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        if inputs.iter().any(|g| *g != inputs[0]) {
            return Err(Error::Alignment(format!(
                "stage `{}` combines inputs on different grids",
                spec.name
            )));
        }
        let input = inputs[0].clone();
        let output = match local_support(&spec.kind, input.len())? {
            Some(local) => input.compose(&local)?,
            None => input,
        };
        if needs_target_alignment(spec) {
            grids.insert(TARGET_KEY.into(), output.clone());
        }
        grids.insert(spec.assign_to.clone(), output);
    }
    Ok(grids.remove(FEATURES_KEY).expect("features key is always present"))
}

/// Maps model-space targets back to physical units by inverting, in reverse
/// order, every stage that rewrote the target in place.
pub fn invert_target(
    stages: &[StageSpec],
    states: &[FittedTransformState],
    unit_id: &str,
    metadata: &BTreeMap<String, String>,
    values: &[f64],
) -> Result<Vec<f64>> {
    if states.len() != stages.len() {
        return Err(Error::Descale(format!(
            "{} fitted states for {} stages",
            states.len(),
            stages.len()
        )));
    }
    let mut current = values.to_vec();
    for (spec, state) in stages.iter().zip(states).rev() {
        if spec.assign_to != TARGET_KEY {
            continue;
        }
        if spec.apply_to.len() != 1 || spec.apply_to[0] != TARGET_KEY || !spec.kind.is_invertible() {
            return Err(Error::Descale(format!(
                "target stage `{}` ({}) has no inverse",
                spec.name,
                spec.kind.name()
            )));
        }
        current = match &spec.kind {
            StageKind::Identity => current,
            StageKind::HealthIndex {
                lifetimes,
                lifetime_key,
            } => {
                let lookup = lifetime_lookup(lifetimes, lifetime_key, unit_id, metadata)?;
                apply_health_index(&lookup, unit_id, &current, Direction::Inverse)?
            }
            kind => {
                let params = ScaleParams::from_state(kind, state, unit_id, spec.fit_scope)?;
                apply_pointwise_scale(&params, &Matrix::column_vector(current), Direction::Inverse)?.into_data()
            }
        };
    }
    Ok(current)
}
