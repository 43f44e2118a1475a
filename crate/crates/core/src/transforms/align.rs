use std::collections::BTreeMap;

use super::AlignmentRule;
use crate::error::{Error, Result};
use crate::model::{Support, SupportMap};

/// Samples or pools a target onto a support map whose indices refer to
/// positions of `values` (1-based). Artificial entries align to NaN.
pub fn align_target(values: &[f64], support: &SupportMap, rule: AlignmentRule) -> Result<Vec<f64>> {
    support
        .entries()
        .iter()
        .map(|entry| {
            let (lo, hi) = match *entry {
                Support::Artificial => return Ok(f64::NAN),
                Support::Point(i) => (i, i),
                Support::Span { lo, hi } => (lo, hi),
            };
            if lo == 0 || lo > hi {
                return Err(Error::Alignment(format!("empty support entry [{lo}, {hi}]")));
            }
            if hi > values.len() {
                return Err(Error::Alignment(format!(
                    "support entry [{lo}, {hi}] exceeds target length {}",
                    values.len()
                )));
            }
            let slice = &values[lo - 1..hi];
            pool(slice, rule)
        })
        .collect()
}

fn pool(slice: &[f64], rule: AlignmentRule) -> Result<f64> {
    Ok(match rule {
        AlignmentRule::Last => slice[slice.len() - 1],
        AlignmentRule::Mean => slice.iter().sum::<f64>() / slice.len() as f64,
        AlignmentRule::Max => {
            if slice.iter().any(|v| v.is_nan()) {
                f64::NAN
            } else {
                slice.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
        AlignmentRule::Majority => {
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for v in slice.iter().filter(|v| !v.is_nan()) {
                if v.fract() != 0.0 || !v.is_finite() {
                    return Err(Error::Alignment(format!(
                        "majority alignment needs integer class codes, found {v}"
                    )));
                }
                *counts.entry(*v as i64).or_default() += 1;
            }
            // BTreeMap iterates codes ascending, so the first maximum wins ties.
            let mut best: Option<(i64, usize)> = None;
            for (code, n) in counts {
                if best.is_none_or(|(_, b)| n > b) {
                    best = Some((code, n));
                }
            }
            best.map_or(f64::NAN, |(code, _)| code as f64)
        }
    })
}
