//! Split routing for both regimes, intra-unit boundary resolution, the
//! leakage audit and context selection for context-conditioned predictors.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{IntraBounds, RawUnit, SplitAssignment, SplitTag};
use crate::transforms::{plan_feature_support, FitRecord, StageSpec};
use crate::windowing::{TabularSample, WindowSample};

/// Anything that can be routed: it knows its unit and supervision index.
pub trait Routable {
    fn unit_id(&self) -> &str;
    fn j_sup(&self) -> usize;
    fn set_split(&mut self, tag: SplitTag);
}

impl Routable for WindowSample {
    fn unit_id(&self) -> &str {
        &self.unit_id
    }
    fn j_sup(&self) -> usize {
        self.j_sup
    }
    fn set_split(&mut self, tag: SplitTag) {
        self.split = tag;
    }
}

impl Routable for TabularSample {
    fn unit_id(&self) -> &str {
        &self.unit_id
    }
    fn j_sup(&self) -> usize {
        self.j_sup
    }
    fn set_split(&mut self, tag: SplitTag) {
        self.split = tag;
    }
}

/// The split a sample belongs to: by unit between units, by supervision
/// index within units.
pub fn split_of(unit_id: &str, j_sup: usize, assignment: &SplitAssignment) -> Result<SplitTag> {
    let unknown = || Error::Routing(format!("unit {unit_id} is not in the split assignment"));
    match assignment {
        SplitAssignment::InterUnit(map) => map.get(unit_id).copied().ok_or_else(unknown),
        SplitAssignment::IntraUnit(map) => {
            let b = map.get(unit_id).ok_or_else(unknown)?;
            Ok(if j_sup <= b.tau_train {
                SplitTag::Train
            } else if j_sup <= b.tau_val {
                SplitTag::Val
            } else {
                SplitTag::Test
            })
        }
    }
}

/// Partitions samples into the three splits, tagging each with its split.
pub fn route_windows<S: Routable>(samples: Vec<S>, assignment: &SplitAssignment) -> Result<BTreeMap<SplitTag, Vec<S>>> {
    let mut out: BTreeMap<SplitTag, Vec<S>> = SplitTag::ALL.iter().map(|t| (*t, Vec::new())).collect();
    for mut s in samples {
        let tag = split_of(s.unit_id(), s.j_sup(), assignment)?;
        s.set_split(tag);
        out.get_mut(&tag).expect("all tags present").push(s);
    }
    Ok(out)
}

/// How intra-unit boundaries are given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundarySpec {
    /// τ_train = floor(train_frac T'), τ_val = floor((train_frac + val_frac) T').
    Fractions { train_frac: f64, val_frac: f64 },
    /// Transformed-grid indices shared by every unit.
    Absolute { tau_train: usize, tau_val: usize },
}

impl BoundarySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BoundarySpec::Fractions { train_frac, val_frac } => {
                let ok = |f: f64| (0.0..=1.0).contains(&f);
                if !ok(train_frac) || !ok(val_frac) || train_frac + val_frac > 1.0 {
                    return Err(Error::Spec(format!(
                        "boundary fractions must be in [0, 1] and sum to at most 1 (got {train_frac}, {val_frac})"
                    )));
                }
            }
            BoundarySpec::Absolute { tau_train, tau_val } if tau_train > tau_val => {
                return Err(Error::Spec(format!("tau_train {tau_train} exceeds tau_val {tau_val}")))
            }
            BoundarySpec::Absolute { .. } => {}
        }
        Ok(())
    }
}

/// Resolves per-unit boundaries on the transformed grid the pipeline will
/// produce, together with the raw index each unit's training fits may reach.
pub fn resolve_intra_assignment(
    units: &[RawUnit],
    stages: &[StageSpec],
    spec: BoundarySpec,
) -> Result<SplitAssignment> {
    spec.validate()?;
    let mut map = BTreeMap::new();
    for unit in units {
        let plan = plan_feature_support(unit.len(), stages)?;
        let t_prime = plan.len();
        let (tau_train, tau_val) = match spec {
            BoundarySpec::Fractions { train_frac, val_frac } => (
                (train_frac * t_prime as f64).floor() as usize,
                (((train_frac + val_frac) * t_prime as f64).floor() as usize).min(t_prime),
            ),
            BoundarySpec::Absolute { tau_train, tau_val } => {
                if tau_val > t_prime {
                    return Err(Error::Spec(format!(
                        "unit {}: tau_val {tau_val} exceeds transformed length {t_prime}",
                        unit.unit_id
                    )));
                }
                (tau_train, tau_val)
            }
        };
        map.insert(
            unit.unit_id.clone(),
            IntraBounds {
                tau_train,
                tau_val,
                t_prime,
                raw_train_limit: plan.raw_hi_through(tau_train),
            },
        );
    }
    Ok(SplitAssignment::IntraUnit(map))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Inter,
    Intra,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitAudit {
    pub stage_name: String,
    pub fitted_on: SplitTag,
    pub consumed_splits: Vec<SplitTag>,
    pub consumed_raw_hi: BTreeMap<String, usize>,
}

impl From<&FitRecord> for FitAudit {
    fn from(r: &FitRecord) -> Self {
        Self {
            stage_name: r.stage_name.clone(),
            fitted_on: r.fitted_on,
            consumed_splits: r.consumed_splits.iter().copied().collect(),
            consumed_raw_hi: r.consumed_raw_hi.clone(),
        }
    }
}

/// Everything the audit needs, in a form that can be stored with a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub mode: SplitMode,
    /// Inter-unit: the units of each split.
    pub unit_splits: BTreeMap<SplitTag, Vec<String>>,
    /// Intra-unit: the largest raw index train fits may read, per unit.
    pub raw_train_limits: BTreeMap<String, usize>,
    pub fits: Vec<FitAudit>,
    /// Routed sample identities (unit, k) per split.
    pub samples: BTreeMap<SplitTag, Vec<(String, i64)>>,
}

impl AuditRecord {
    pub fn new(
        assignment: &SplitAssignment,
        fit_log: &[FitRecord],
        samples: BTreeMap<SplitTag, Vec<(String, i64)>>,
    ) -> Self {
        let mut unit_splits: BTreeMap<SplitTag, Vec<String>> = BTreeMap::new();
        let mut raw_train_limits = BTreeMap::new();
        let mode = match assignment {
            SplitAssignment::InterUnit(map) => {
                for (u, t) in map {
                    unit_splits.entry(*t).or_default().push(u.clone());
                }
                SplitMode::Inter
            }
            SplitAssignment::IntraUnit(map) => {
                for (u, b) in map {
                    raw_train_limits.insert(u.clone(), b.raw_train_limit);
                }
                SplitMode::Intra
            }
        };
        Self {
            mode,
            unit_splits,
            raw_train_limits,
            fits: fit_log.iter().map(FitAudit::from).collect(),
            samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageKind {
    /// A fitted state was estimated from, or read, non-training data.
    NonTrainFit,
    /// An intra-unit fit read raw time past the unit's training boundary.
    FitPastBoundary,
    /// A unit or sample appears in more than one split.
    SplitOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub kind: LeakageKind,
    pub message: String,
}

/// Checks a run record against the leakage policy; an empty list is a pass.
pub fn leakage_audit(record: &AuditRecord) -> Vec<LeakageViolation> {
    let mut out = Vec::new();
    let mut push = |kind, message: String| out.push(LeakageViolation { kind, message });
    let train_units: BTreeSet<&str> = record
        .unit_splits
        .get(&SplitTag::Train)
        .map(|v| v.iter().map(String::as_str).collect())
        .unwrap_or_default();

    for fit in &record.fits {
        if fit.fitted_on != SplitTag::Train {
            push(
                LeakageKind::NonTrainFit,
                format!("stage `{}` fitted on {}", fit.stage_name, fit.fitted_on),
            );
        }
        for tag in fit.consumed_splits.iter().filter(|t| **t != SplitTag::Train) {
            push(
                LeakageKind::NonTrainFit,
                format!("stage `{}` read {tag} data while fitting", fit.stage_name),
            );
        }
        match record.mode {
            SplitMode::Inter => {
                for unit in fit.consumed_raw_hi.keys() {
                    if !train_units.contains(unit.as_str()) {
                        push(
                            LeakageKind::NonTrainFit,
                            format!("stage `{}` read unit {unit}, which is not a train unit", fit.stage_name),
                        );
                    }
                }
            }
            SplitMode::Intra => {
                for (unit, hi) in &fit.consumed_raw_hi {
                    match record.raw_train_limits.get(unit) {
                        Some(limit) if hi <= limit => {}
                        Some(limit) => push(
                            LeakageKind::FitPastBoundary,
                            format!(
                                "stage `{}` read raw index {hi} of unit {unit}, past its training limit {limit}",
                                fit.stage_name
                            ),
                        ),
                        None => push(
                            LeakageKind::FitPastBoundary,
                            format!("stage `{}` read unit {unit}, which has no boundary", fit.stage_name),
                        ),
                    }
                }
            }
        }
    }

    let mut owner: BTreeMap<&str, SplitTag> = BTreeMap::new();
    for (tag, units) in &record.unit_splits {
        for u in units {
            if let Some(prev) = owner.insert(u, *tag) {
                push(
                    LeakageKind::SplitOverlap,
                    format!("unit {u} is in both {prev} and {tag}"),
                );
            }
        }
    }
    let mut seen: BTreeMap<(&str, i64), SplitTag> = BTreeMap::new();
    for (tag, ids) in &record.samples {
        for (u, k) in ids {
            if let Some(prev) = seen.insert((u.as_str(), *k), *tag) {
                push(
                    LeakageKind::SplitOverlap,
                    format!("sample ({u}, {k}) is in both {prev} and {tag}"),
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextSelection {
    /// The closest pool members by Euclidean distance on the tabular vector.
    Nearest,
    /// A uniform draw, seeded per query.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextSpec {
    pub size: usize,
    pub selection: ContextSelection,
    /// Drop same-unit members supervised past the unit's training boundary.
    pub enforce_intra_boundary: bool,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Builds the labelled context for one query from the training pool. The
/// query itself never appears, and the result is a pure function of
/// (query, pool, spec, assignment).
pub fn select_context<'a>(
    query: &TabularSample,
    pool: &'a [TabularSample],
    spec: &ContextSpec,
    assignment: &SplitAssignment,
) -> Result<Vec<&'a TabularSample>> {
    if spec.size == 0 {
        return Err(Error::Spec("context size must be >= 1".into()));
    }
    for m in pool {
        let routed = split_of(&m.unit_id, m.j_sup, assignment)?;
        if m.split != SplitTag::Train || routed != SplitTag::Train {
            return Err(Error::Leakage(format!(
                "context pool contains a {routed} sample ({}, {})",
                m.unit_id, m.k
            )));
        }
    }
    let boundary = match (spec.enforce_intra_boundary, assignment) {
        (true, SplitAssignment::IntraUnit(map)) => map.get(&query.unit_id).map(|b| b.tau_train),
        _ => None,
    };
    let mut candidates: Vec<&TabularSample> = pool
        .iter()
        .filter(|m| !(m.unit_id == query.unit_id && m.k == query.k))
        .filter(|m| match boundary {
            Some(tau) => m.unit_id != query.unit_id || m.j_sup <= tau,
            None => true,
        })
        .collect();
    if candidates.len() < spec.size {
        return Err(Error::Context {
            requested: spec.size,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|a, b| a.unit_id.as_bytes().cmp(b.unit_id.as_bytes()).then(a.k.cmp(&b.k)));
    match spec.selection {
        ContextSelection::Nearest => {
            let mut ranked: Vec<(f64, &TabularSample)> =
                candidates.into_iter().map(|m| (euclidean(&m.x, &query.x), m)).collect();
            // Stable sort keeps the (unit_id, k) order among equal distances.
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(ranked.into_iter().take(spec.size).map(|(_, m)| m).collect())
        }
        ContextSelection::Random { seed } => {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(query.unit_id.as_bytes());
            h.update([0u8]);
            h.update(query.k.to_le_bytes());
            let digest = h.finalize();
            let mut rng = ChaCha8Rng::from_seed(digest.into());
            Ok(sample(&mut rng, candidates.len(), spec.size)
                .into_iter()
                .map(|i| candidates[i])
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::WindowLabel;

    fn tab(unit: &str, k: i64, j_sup: usize, x: f64) -> TabularSample {
        TabularSample {
            unit_id: unit.into(),
            k,
            j_sup,
            x: vec![x],
            y: WindowLabel::Scalar(x),
            split: SplitTag::Train,
        }
    }

    fn intra(tau_train: usize, tau_val: usize, t_prime: usize) -> SplitAssignment {
        SplitAssignment::IntraUnit(BTreeMap::from([(
            "u".to_string(),
            IntraBounds {
                tau_train,
                tau_val,
                t_prime,
                raw_train_limit: tau_train,
            },
        )]))
    }

    #[test]
    fn intra_routing_by_supervision_index() {
        let samples: Vec<TabularSample> = (1..=17).map(|k| tab("u", k, k as usize + 2, 0.0)).collect();
        let routed = route_windows(samples, &intra(10, 15, 20)).unwrap();
        let ks = |t| routed[&t].iter().map(|s| s.k).collect::<Vec<_>>();
        assert_eq!(ks(SplitTag::Train), (1..=8).collect::<Vec<_>>());
        assert_eq!(ks(SplitTag::Val), (9..=13).collect::<Vec<_>>());
        assert_eq!(ks(SplitTag::Test), (14..=17).collect::<Vec<_>>());
        assert!(routed[&SplitTag::Val].iter().all(|s| s.split == SplitTag::Val));
    }

    #[test]
    fn collapsed_boundaries_route_everything_to_train() {
        let samples: Vec<TabularSample> = (1..=5).map(|k| tab("u", k, k as usize, 0.0)).collect();
        let routed = route_windows(samples, &intra(5, 5, 5)).unwrap();
        assert_eq!(routed[&SplitTag::Train].len(), 5);
        assert!(routed[&SplitTag::Test].is_empty());
    }

    #[test]
    fn unknown_unit_is_a_routing_error() {
        let a = SplitAssignment::inter(&["a"], &[], &["b"]).unwrap();
        assert!(matches!(
            route_windows(vec![tab("zz", 1, 1, 0.0)], &a),
            Err(Error::Routing(_))
        ));
    }

    #[test]
    fn context_excludes_query_and_respects_boundary() {
        let pool = vec![tab("A", 1, 3, 0.0), tab("B", 10, 12, 0.2)];
        let a = SplitAssignment::IntraUnit(BTreeMap::from([
            (
                "A".to_string(),
                IntraBounds {
                    tau_train: 10,
                    tau_val: 15,
                    t_prime: 20,
                    raw_train_limit: 10,
                },
            ),
            (
                "B".to_string(),
                IntraBounds {
                    tau_train: 20,
                    tau_val: 20,
                    t_prime: 20,
                    raw_train_limit: 20,
                },
            ),
        ]));
        let spec = ContextSpec {
            size: 1,
            selection: ContextSelection::Nearest,
            enforce_intra_boundary: true,
        };
        let c = select_context(&pool[0], &pool, &ContextSpec { size: 1, ..spec }, &a).unwrap();
        assert_eq!((c[0].unit_id.as_str(), c[0].k), ("B", 10));
        let err = select_context(&pool[0], &pool, &ContextSpec { size: 2, ..spec }, &a).unwrap_err();
        assert!(matches!(
            err,
            Error::Context {
                requested: 2,
                available: 1
            }
        ));
        // A window past A's training boundary is refused even if tagged train.
        let leaky = [pool.clone(), vec![tab("A", 10, 12, 0.1)]].concat();
        let err = select_context(&pool[0], &leaky, &spec, &a).unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
    }

    #[test]
    fn random_context_is_seeded() {
        let pool: Vec<TabularSample> = (0..20).map(|k| tab("A", k, 1, k as f64)).collect();
        let spec = ContextSpec {
            size: 5,
            selection: ContextSelection::Random { seed: 3 },
            enforce_intra_boundary: false,
        };
        let a = SplitAssignment::inter(&["A"], &[], &[]).unwrap();
        let x = select_context(&pool[0], &pool, &spec, &a).unwrap();
        let y = select_context(&pool[0], &pool, &spec, &a).unwrap();
        assert_eq!(x, y);
        assert!(x.iter().all(|m| m.k != 0));
    }
}
