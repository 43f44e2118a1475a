use std::collections::{BTreeMap, BTreeSet};

use super::state::FittedTransformState;
use super::Direction;
use crate::error::{Error, Result};

/// Total lifetime L(u) per unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HealthIndexLookup {
    lifetimes: BTreeMap<String, f64>,
}

impl HealthIndexLookup {
    pub fn new(lifetimes: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((u, l)) = lifetimes.iter().find(|(_, l)| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Spec(format!("lifetime of {u} must be > 0, got {l}")));
        }
        Ok(Self { lifetimes })
    }

    pub fn lifetime(&self, unit_id: &str) -> Result<f64> {
        self.lifetimes
            .get(unit_id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no lifetime known for unit {unit_id}")))
    }
}

/// HI = 1 - r / L(u) going forward, r = L(u) (1 - HI) going back. NaNs pass
/// through unchanged.
pub fn apply_health_index(
    lookup: &HealthIndexLookup,
    unit_id: &str,
    values: &[f64],
    direction: Direction,
) -> Result<Vec<f64>> {
    let life = lookup.lifetime(unit_id)?;
    values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                return Ok(v);
            }
            match direction {
                Direction::Forward => {
                    if !(0.0..=life).contains(&v) {
                        return Err(Error::Range(format!(
                            "runtime {v} of unit {unit_id} outside [0, {life}]"
                        )));
                    }
                    Ok(1.0 - v / life)
                }
                Direction::Inverse => Ok(life * (1.0 - v)),
            }
        })
        .collect()
}

/// Dataset-id lookup λ: sorted unique training ids mapped to 1..=n.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptLookup {
    codes: BTreeMap<String, usize>,
}

impl ConceptLookup {
    pub fn fit<'a>(train_ids: impl IntoIterator<Item = &'a str>) -> Self {
        let unique: BTreeSet<&str> = train_ids.into_iter().collect();
        Self {
            codes: unique
                .into_iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), i + 1))
                .collect(),
        }
    }

    pub(crate) fn from_state(state: &FittedTransformState) -> Result<Self> {
        let mut codes = BTreeMap::new();
        for (name, v) in &state.params {
            if let Some(id) = name.strip_prefix("dataset:") {
                codes.insert(id.to_string(), v[0] as usize);
            }
        }
        if codes.is_empty() {
            return Err(Error::Lookup(format!(
                "stage `{}` holds no dataset lookup",
                state.stage_name
            )));
        }
        Ok(Self { codes })
    }

    pub fn code(&self, dataset_id: &str) -> Result<usize> {
        self.codes
            .get(dataset_id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("dataset id `{dataset_id}` was not seen in training")))
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// z = (λ(d) - 1) d_c + m, where m is the 1-based position of the single
/// active concept. Indicators are rounded first; exactly one must be set.
pub fn encode_concept_class(lookup: &ConceptLookup, concepts: &[f64], dataset_id: &str) -> Result<f64> {
    let d_c = concepts.len();
    let mut active = Vec::new();
    for (m, v) in concepts.iter().enumerate() {
        match v.round() {
            0.0 => {}
            1.0 => active.push(m + 1),
            _ => return Err(Error::Range(format!("concept indicator {v} does not round to 0 or 1"))),
        }
    }
    let m = match active.as_slice() {
        [m] => *m,
        [] => return Err(Error::Contract("no active concept in indicator vector".into())),
        many => {
            return Err(Error::Contract(format!(
                "multiple active concepts {many:?}; exactly one is allowed"
            )))
        }
    };
    let lambda = lookup.code(dataset_id)?;
    Ok(((lambda - 1) * d_c + m) as f64)
}
